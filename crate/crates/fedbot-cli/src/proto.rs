//! Line-oriented JSON protocol between bot processes and the local broker.
//!
//! One request per line, one response per line. Channel bodies are the same
//! encoded envelopes that travel on the C&C channel; this wrapper only adds
//! addressing. Cursors live client-side: `read` passes the position in and
//! gets the advanced position back, so the broker holds no per-bot state
//! beyond the store itself.

use fedbot_core::channel::{ChannelMessage, MessageId, Tick};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Attach { bot: String },
    Post { author: String, body: String },
    Read { next_id: MessageId, limit: usize },
    TryDelete { bot: String, id: MessageId },
    History { from: Option<Tick> },
    Info,
    Now,
    FrontSend { bot: String, user: String, text: String },
    FrontPoll { bot: String },
    FrontDeliver { user: String, text: String },
    FrontRecv { user: String },
}

/// A front-channel line in either direction. For lines to a bot, `user` is
/// the sender; for lines back to a user, `user` names the delivering bot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontLine {
    pub user: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub err: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<MessageId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub next_id: Option<MessageId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attached_at: Option<Tick>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub claimed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub messages: Option<Vec<ChannelMessage>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub has_memory: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tick: Option<Tick>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lines: Option<Vec<FrontLine>>,
}

impl Response {
    pub fn ok() -> Response {
        Response {
            ok: true,
            ..Response::default()
        }
    }

    pub fn error(msg: impl Into<String>) -> Response {
        Response {
            ok: false,
            err: Some(msg.into()),
            ..Response::default()
        }
    }
}
