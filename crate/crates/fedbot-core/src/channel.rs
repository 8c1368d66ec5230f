//! The C&C channel: an ordered message store with per-bot cursors and
//! first-wins deletion.
//!
//! Deleting a message is how a bot claims a command: exactly one caller of
//! [`Channel::try_delete`] gets `true` for a given id, so a successful delete
//! is an atomic ownership claim. Deletion leaves a tombstone (id retired,
//! body dropped) so cursor arithmetic stays simple.
//!
//! Platform memory semantics are configurable: on a channel with memory a
//! freshly attached cursor can read the whole history; without memory it only
//! sees messages posted at or after the attach tick.
//!
//! A `Channel` itself is a single-owner value; multi-threaded deployments
//! wrap it in a lock (see the broker in the CLI crate), which is what makes
//! `try_delete` linearizable across processes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{decode_envelope, EnvelopeKind, WireError};

/// Monotonically increasing message identifier, assigned by the channel.
pub type MessageId = u64;
/// Logical clock value; the simulator advances it in unit steps.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Whether joiners can read history posted before they attached.
    pub has_memory: bool,
}

/// A posted envelope with its broker-assigned id and logical timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMessage {
    pub id: MessageId,
    pub author: String,
    pub body: String,
    pub posted_at: Tick,
}

/// A bot's private read position. `next_id` never decreases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub owner: String,
    pub next_id: MessageId,
    pub attached_at: Tick,
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("message body is not a valid envelope: {0}")]
    InvalidBody(#[from] WireError),
}

#[derive(Debug, Clone)]
struct Slot {
    author: String,
    body: String,
    posted_at: Tick,
    deleted: bool,
}

#[derive(Debug, Clone)]
pub struct Channel {
    config: ChannelConfig,
    slots: Vec<Slot>,
}

impl Channel {
    pub fn new(config: ChannelConfig) -> Self {
        Channel {
            config,
            slots: Vec::new(),
        }
    }

    pub fn has_memory(&self) -> bool {
        self.config.has_memory
    }

    /// Total number of ids ever assigned (live and deleted).
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Creates a cursor for `bot`. On a memory channel the cursor starts at
    /// id 0; otherwise at the first message posted at or after `now`.
    pub fn attach(&self, bot: &str, now: Tick) -> Cursor {
        let next_id = if self.config.has_memory {
            0
        } else {
            self.slots
                .iter()
                .position(|s| s.posted_at >= now)
                .map(|i| i as MessageId)
                .unwrap_or(self.slots.len() as MessageId)
        };
        Cursor {
            owner: bot.to_string(),
            next_id,
            attached_at: now,
        }
    }

    /// Appends a message and returns its fresh id. The body must decode as a
    /// valid envelope.
    pub fn post(&mut self, author: &str, body: &str, now: Tick) -> Result<MessageId, ChannelError> {
        decode_envelope(body)?;
        let id = self.slots.len() as MessageId;
        self.slots.push(Slot {
            author: author.to_string(),
            body: body.to_string(),
            posted_at: now,
            deleted: false,
        });
        Ok(id)
    }

    /// Returns up to `limit` undeleted messages starting at the cursor, in id
    /// order, advancing the cursor past everything returned and past deleted
    /// gaps it skipped. A message is never delivered twice to the same
    /// cursor.
    pub fn read(&self, cursor: &mut Cursor, limit: usize) -> Vec<ChannelMessage> {
        let mut out = Vec::new();
        while out.len() < limit && (cursor.next_id as usize) < self.slots.len() {
            let id = cursor.next_id;
            let slot = &self.slots[id as usize];
            cursor.next_id += 1;
            if !slot.deleted {
                out.push(ChannelMessage {
                    id,
                    author: slot.author.clone(),
                    body: slot.body.clone(),
                    posted_at: slot.posted_at,
                });
            }
        }
        out
    }

    /// Atomic first-wins deletion: `true` for exactly one caller per id.
    /// Unknown ids and repeated deletions return `false`.
    pub fn try_delete(&mut self, _bot: &str, id: MessageId) -> bool {
        match self.slots.get_mut(id as usize) {
            Some(slot) if !slot.deleted => {
                slot.deleted = true;
                slot.body = String::new();
                true
            }
            _ => false,
        }
    }

    /// All live messages, optionally restricted to those posted at or after
    /// `horizon`. Used for on-demand scans such as the bot directory.
    pub fn visible_history(&self, horizon: Option<Tick>) -> Vec<ChannelMessage> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.deleted && horizon.is_none_or(|h| s.posted_at >= h))
            .map(|(i, s)| ChannelMessage {
                id: i as MessageId,
                author: s.author.clone(),
                body: s.body.clone(),
                posted_at: s.posted_at,
            })
            .collect()
    }

    /// Ids of live `Cmd` messages; at scenario end these are the commands
    /// nobody claimed.
    pub fn live_command_ids(&self) -> Vec<MessageId> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.deleted)
            .filter(|(_, s)| {
                decode_envelope(&s.body)
                    .map(|e| e.kind == EnvelopeKind::Cmd)
                    .unwrap_or(false)
            })
            .map(|(i, _)| i as MessageId)
            .collect()
    }
}

/// The channel operations a bot needs, abstracted so the same bot loop runs
/// against the in-memory store (simulator) or a broker connection (CLI).
pub trait ChannelApi {
    fn attach(&mut self, bot: &str, now: Tick) -> Cursor;
    fn post(&mut self, author: &str, body: &str, now: Tick) -> Result<MessageId, ChannelError>;
    fn read(&mut self, cursor: &mut Cursor, limit: usize) -> Vec<ChannelMessage>;
    fn try_delete(&mut self, bot: &str, id: MessageId) -> bool;
    fn visible_history(&mut self, horizon: Option<Tick>) -> Vec<ChannelMessage>;
    fn has_memory(&mut self) -> bool;
}

impl ChannelApi for Channel {
    fn attach(&mut self, bot: &str, now: Tick) -> Cursor {
        Channel::attach(self, bot, now)
    }
    fn post(&mut self, author: &str, body: &str, now: Tick) -> Result<MessageId, ChannelError> {
        Channel::post(self, author, body, now)
    }
    fn read(&mut self, cursor: &mut Cursor, limit: usize) -> Vec<ChannelMessage> {
        Channel::read(self, cursor, limit)
    }
    fn try_delete(&mut self, bot: &str, id: MessageId) -> bool {
        Channel::try_delete(self, bot, id)
    }
    fn visible_history(&mut self, horizon: Option<Tick>) -> Vec<ChannelMessage> {
        Channel::visible_history(self, horizon)
    }
    fn has_memory(&mut self) -> bool {
        Channel::has_memory(self)
    }
}
