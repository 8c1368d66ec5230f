//! The per-bot protocol state machine.
//!
//! A bot serves its admins on the front channel and cooperates with its peers
//! over the shared C&C channel. The decision procedure for a user line is:
//! execute locally if the command registry can serve it, otherwise post a
//! `Cmd` envelope to the channel and remember a pending request. While
//! polling the channel a bot claims foreign commands by deleting them first
//! (delete, then execute, then post the `Rep`), answers `all:` broadcasts
//! without claiming, and routes replies whose `frm` matches one of its
//! pending requests back to the waiting user.
//!
//! Each bot is single-threaded: a driver (the simulator or the CLI loop)
//! invokes these operations sequentially. Cross-bot concurrency exists only
//! at the channel, whose first-wins delete is the linearization point.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::channel::{ChannelApi, ChannelError, ChannelMessage, Cursor, MessageId, Tick};
use crate::plugins::Registry;
use crate::trace::Event;
use crate::wire::{
    decode_envelope, decode_reply_payload, encode_envelope, encode_reply_payload, Envelope,
    EnvelopeKind,
};

/// Messages pulled per poll step; keeps one simulation step bounded.
pub const POLL_BATCH_LIMIT: usize = 16;

/// Prefix marking a multi-bot command every capable bot should answer.
pub const BROADCAST_PREFIX: &str = "all:";

#[derive(Debug, Error)]
pub enum BotError {
    #[error("user {0:?} is not an admin of this bot")]
    Unauthorized(String),
    #[error("empty command")]
    EmptyCommand,
    #[error("bot is not attached to a channel")]
    NotAttached,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BotConfig {
    pub name: String,
    /// Descriptive only; shown in the Hello message.
    pub backend_label: String,
    pub address: String,
    /// Users allowed to issue commands on the front channel.
    pub admins: Vec<String>,
    /// Ticks a forwarded command may wait for its reply; `None` waits
    /// forever. Doubles as the collection window of an `all:` broadcast.
    pub reply_timeout: Option<u64>,
}

/// Who is asking. `channel_id` is the platform-level identifier carried in
/// `frm`; when absent, `<bot>/<handle>` is used so replies stay routable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserIdentity {
    pub handle: String,
    pub display_name: String,
    pub host: String,
    pub channel_id: Option<String>,
}

impl UserIdentity {
    pub fn from_handle(handle: impl Into<String>) -> Self {
        let handle = handle.into();
        UserIdentity {
            display_name: handle.clone(),
            host: String::new(),
            channel_id: None,
            handle,
        }
    }
}

/// A forwarded command awaiting its reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRequest {
    pub frm: String,
    pub cmd: String,
    pub user: String,
    pub issued_at: Tick,
    pub deadline: Option<Tick>,
    /// `all:` requests collect replies until the window closes instead of
    /// being dropped on the first match.
    pub broadcast: bool,
    pub cmd_message_id: Option<MessageId>,
    pub replies: u32,
}

/// A row of the on-demand bot directory assembled from Hello messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BotDirectoryEntry {
    pub name: String,
    pub backend_label: String,
    pub address: String,
}

/// A parsed front-channel line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedLine {
    Empty,
    ListBots,
    Command {
        /// `fw`-prefixed lines always go to the channel, even if the local
        /// registry could serve them.
        forced_forward: bool,
        cmd: String,
        args: String,
    },
}

/// Splits `<cmd> [<args...>]` at the first space; `fw` strips one level.
pub fn parse_command_line(text: &str) -> ParsedLine {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return ParsedLine::Empty;
    }
    let (first, rest) = match trimmed.split_once(' ') {
        Some((a, b)) => (a, b),
        None => (trimmed, ""),
    };
    if first == "listB" {
        return ParsedLine::ListBots;
    }
    if first == "fw" {
        let rest = rest.trim_start();
        if rest.is_empty() {
            return ParsedLine::Empty;
        }
        let (cmd, args) = match rest.split_once(' ') {
            Some((a, b)) => (a, b),
            None => (rest, ""),
        };
        return ParsedLine::Command {
            forced_forward: true,
            cmd: cmd.to_string(),
            args: args.to_string(),
        };
    }
    ParsedLine::Command {
        forced_forward: false,
        cmd: first.to_string(),
        args: rest.to_string(),
    }
}

/// One federated bot: identity, command registry, channel cursor, pending
/// requests, and the outbox of front-channel deliveries.
#[derive(Debug, Clone)]
pub struct BotState {
    pub config: BotConfig,
    pub registry: Registry,
    cursor: Option<Cursor>,
    pending: Vec<PendingRequest>,
    executed_broadcasts: BTreeSet<MessageId>,
    front_outbox: Vec<(String, String)>,
}

impl BotState {
    pub fn new(config: BotConfig, registry: Registry) -> Self {
        BotState {
            config,
            registry,
            cursor: None,
            pending: Vec::new(),
            executed_broadcasts: BTreeSet::new(),
            front_outbox: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn is_attached(&self) -> bool {
        self.cursor.is_some()
    }

    pub fn cursor(&self) -> Option<&Cursor> {
        self.cursor.as_ref()
    }

    pub fn pending(&self) -> &[PendingRequest] {
        &self.pending
    }

    /// Deliveries queued for front-channel users, oldest first.
    pub fn drain_outbox(&mut self) -> Vec<(String, String)> {
        std::mem::take(&mut self.front_outbox)
    }

    pub fn attach<C: ChannelApi>(&mut self, channel: &mut C, now: Tick) {
        self.cursor = Some(channel.attach(&self.config.name, now));
    }

    /// Posts the presence message. Written once per start and never updated;
    /// a restarted bot simply appends another Hello.
    pub fn register<C: ChannelApi>(
        &mut self,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) -> Result<MessageId, BotError> {
        if self.cursor.is_none() {
            return Err(BotError::NotAttached);
        }
        let args = format!(
            "Hello! IP: {}. Commands [{}]. Name: {}. Backend: {}",
            self.config.address,
            self.registry.names().join(", "),
            self.config.name,
            self.config.backend_label
        );
        let env = Envelope::new("", "", "", EnvelopeKind::Msg, "", args)
            .expect("hello envelope is always valid");
        let id = self.post_envelope(channel, &env, now, events)?;
        events.push(Event::register(now, &self.config.name, id));
        Ok(id)
    }

    /// True iff the registry knows `cmd` and its validator accepts `args`.
    pub fn can_execute(&self, cmd: &str, args: &str) -> bool {
        self.registry
            .get(cmd)
            .map(|spec| spec.validate_args(args))
            .unwrap_or(false)
    }

    /// Handles one line from a front-channel user: execute locally, or post
    /// a `Cmd` envelope and remember the pending request.
    pub fn submit_user_text<C: ChannelApi>(
        &mut self,
        user: &UserIdentity,
        text: &str,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) -> Result<(), BotError> {
        if !self.config.admins.iter().any(|a| a == &user.handle) {
            return Err(BotError::Unauthorized(user.handle.clone()));
        }
        match parse_command_line(text) {
            ParsedLine::Empty => {
                self.front_outbox.push((user.handle.clone(), self.help_text()));
                Err(BotError::EmptyCommand)
            }
            ParsedLine::ListBots => {
                let listing = self.format_directory(channel);
                self.front_outbox.push((user.handle.clone(), listing));
                Ok(())
            }
            ParsedLine::Command {
                forced_forward,
                cmd,
                args,
            } => {
                if !forced_forward && self.can_execute(&cmd, &args) {
                    let result = self.run_handler(&cmd, &args, now);
                    events.push(Event::execute(now, &self.config.name, None, &cmd));
                    self.front_outbox.push((user.handle.clone(), result));
                    Ok(())
                } else {
                    self.forward(user, &cmd, &args, channel, now, events)
                }
            }
        }
    }

    fn forward<C: ChannelApi>(
        &mut self,
        user: &UserIdentity,
        cmd: &str,
        args: &str,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) -> Result<(), BotError> {
        let frm = user
            .channel_id
            .clone()
            .unwrap_or_else(|| format!("{}/{}", self.config.name, user.handle));
        let env = Envelope {
            user_name: user.display_name.clone(),
            user_host: user.host.clone(),
            frm: frm.clone(),
            kind: EnvelopeKind::Cmd,
            cmd: cmd.to_string(),
            args: args.to_string(),
        };
        let id = self.post_envelope(channel, &env, now, events)?;
        self.pending.push(PendingRequest {
            frm,
            cmd: cmd.to_string(),
            user: user.handle.clone(),
            issued_at: now,
            deadline: self.config.reply_timeout.map(|t| now + t),
            broadcast: cmd.starts_with(BROADCAST_PREFIX),
            cmd_message_id: Some(id),
            replies: 0,
        });
        Ok(())
    }

    /// Reads one batch from the cursor, recording a Read event per message.
    /// Split from [`BotState::process_message`] so schedules can interleave
    /// at the granularity where claim races actually happen.
    pub fn poll_read<C: ChannelApi>(
        &mut self,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) -> Vec<ChannelMessage> {
        let Some(cursor) = self.cursor.as_mut() else {
            return Vec::new();
        };
        let batch = channel.read(cursor, POLL_BATCH_LIMIT);
        for m in &batch {
            events.push(Event::read(now, &self.config.name, m.id));
        }
        batch
    }

    /// Applies one channel message to the bot state.
    pub fn process_message<C: ChannelApi>(
        &mut self,
        msg: &ChannelMessage,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) {
        let env = match decode_envelope(&msg.body) {
            Ok(env) => env,
            Err(err) => {
                log::warn!("skipping undecodable message {}: {err}", msg.id);
                return;
            }
        };
        match env.kind {
            // Presence is never recorded; the directory is scanned on demand.
            EnvelopeKind::Msg => {}
            EnvelopeKind::Cmd => self.handle_command(&env, msg.id, channel, now, events),
            EnvelopeKind::Rep => self.handle_reply(&env, msg.id, channel, now, events),
        }
    }

    fn handle_command<C: ChannelApi>(
        &mut self,
        env: &Envelope,
        id: MessageId,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) {
        if let Some(name) = env.cmd.strip_prefix(BROADCAST_PREFIX) {
            // Broadcasts are answered without claiming, so the message stays
            // visible to every other capable bot. The executed set keeps a
            // re-reading bot from answering twice.
            if self.can_execute(name, &env.args) && !self.executed_broadcasts.contains(&id) {
                let result = self.run_handler(name, &env.args, now);
                events.push(Event::execute(now, &self.config.name, Some(id), name));
                self.executed_broadcasts.insert(id);
                let _ = self.post_reply(&env.frm, &result, channel, now, events);
            }
            return;
        }
        // A command whose frm matches one of our pending requests is our own
        // forward; the originator never claims it, which also prevents
        // re-forwarding loops.
        if self.pending.iter().any(|p| p.frm == env.frm) {
            return;
        }
        if !self.can_execute(&env.cmd, &env.args) {
            return;
        }
        let claimed = channel.try_delete(&self.config.name, id);
        events.push(Event::claim(now, &self.config.name, id, claimed));
        if !claimed {
            return;
        }
        // Claim strictly before execute: a crash here loses the command
        // instead of duplicating the work.
        let result = self.run_handler(&env.cmd, &env.args, now);
        events.push(Event::execute(now, &self.config.name, Some(id), &env.cmd));
        let _ = self.post_reply(&env.frm, &result, channel, now, events);
    }

    fn handle_reply<C: ChannelApi>(
        &mut self,
        env: &Envelope,
        id: MessageId,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) {
        // Oldest-first among pending entries with the same frm.
        let Some(idx) = self.pending.iter().position(|p| p.frm == env.frm) else {
            return; // reply belongs to another bot
        };
        let claimed = channel.try_delete(&self.config.name, id);
        events.push(Event::claim(now, &self.config.name, id, claimed));
        if !claimed {
            return;
        }
        let text = match decode_reply_payload(&env.args) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(err) => format!("ERROR: undecodable reply payload ({err})"),
        };
        let user = self.pending[idx].user.clone();
        self.front_outbox.push((user, text));
        if self.pending[idx].broadcast {
            self.pending[idx].replies += 1;
        } else {
            self.pending.remove(idx);
        }
    }

    /// One full poll step: read a batch, process every message in it.
    pub fn poll_once<C: ChannelApi>(
        &mut self,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) {
        let batch = self.poll_read(channel, now, events);
        for msg in &batch {
            self.process_message(msg, channel, now, events);
        }
    }

    /// Scans readable history for Hello messages and assembles the
    /// directory, newest registration per name winning. Nothing is cached.
    pub fn list_bots<C: ChannelApi>(
        &self,
        channel: &mut C,
    ) -> Result<Vec<BotDirectoryEntry>, BotError> {
        let cursor = self.cursor.as_ref().ok_or(BotError::NotAttached)?;
        let horizon = if channel.has_memory() {
            None
        } else {
            Some(cursor.attached_at)
        };
        let mut latest: Vec<(MessageId, BotDirectoryEntry)> = Vec::new();
        for msg in channel.visible_history(horizon) {
            let Ok(env) = decode_envelope(&msg.body) else {
                continue;
            };
            if env.kind != EnvelopeKind::Msg {
                continue;
            }
            match parse_hello(&env.args) {
                Some(entry) => {
                    if let Some(slot) = latest.iter_mut().find(|(_, e)| e.name == entry.name) {
                        *slot = (msg.id, entry);
                    } else {
                        latest.push((msg.id, entry));
                    }
                }
                None => log::warn!("malformed Hello in message {}", msg.id),
            }
        }
        latest.sort_by_key(|(id, _)| *id);
        Ok(latest.into_iter().map(|(_, e)| e).collect())
    }

    /// Times out overdue pending requests. An expired broadcast closes its
    /// collection window: the original `all:` command is deleted from the
    /// channel, and the user is told TIMEOUT only if nothing ever arrived.
    pub fn expire_pending<C: ChannelApi>(
        &mut self,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) {
        let mut i = 0;
        while i < self.pending.len() {
            let due = self.pending[i].deadline.is_some_and(|d| d <= now);
            if !due {
                i += 1;
                continue;
            }
            let p = self.pending.remove(i);
            if p.broadcast {
                if let Some(cmd_id) = p.cmd_message_id {
                    let claimed = channel.try_delete(&self.config.name, cmd_id);
                    events.push(Event::claim(now, &self.config.name, cmd_id, claimed));
                }
                if p.replies == 0 {
                    events.push(Event::timeout(now, &self.config.name, &p.user, &p.cmd));
                    self.front_outbox
                        .push((p.user, format!("TIMEOUT: {}", p.cmd)));
                }
            } else {
                events.push(Event::timeout(now, &self.config.name, &p.user, &p.cmd));
                self.front_outbox
                    .push((p.user, format!("TIMEOUT: {}", p.cmd)));
            }
        }
    }

    fn run_handler(&mut self, cmd: &str, args: &str, now: Tick) -> String {
        match self.registry.get_mut(cmd) {
            Some(spec) => match spec.invoke(args, now) {
                Ok(text) => text,
                Err(err) => format!("ERROR: {err}"),
            },
            None => format!("ERROR: unknown command {cmd:?}"),
        }
    }

    fn post_reply<C: ChannelApi>(
        &mut self,
        frm: &str,
        result: &str,
        channel: &mut C,
        now: Tick,
        events: &mut Vec<Event>,
    ) -> Result<MessageId, BotError> {
        let env = Envelope {
            user_name: self.config.name.clone(),
            user_host: self.config.address.clone(),
            frm: frm.to_string(),
            kind: EnvelopeKind::Rep,
            cmd: String::new(),
            args: encode_reply_payload(result.as_bytes()),
        };
        self.post_envelope(channel, &env, now, events)
    }

    fn post_envelope<C: ChannelApi>(
        &mut self,
        channel: &mut C,
        env: &Envelope,
        now: Tick,
        events: &mut Vec<Event>,
    ) -> Result<MessageId, BotError> {
        let body = encode_envelope(env).map_err(ChannelError::InvalidBody)?;
        let id = channel.post(&self.config.name, &body, now)?;
        events.push(Event::post(
            now,
            &self.config.name,
            id,
            env.kind.as_str(),
            &env.cmd,
            &body,
        ));
        Ok(id)
    }

    fn help_text(&self) -> String {
        format!(
            "Commands [{}]. Use `fw <cmd> [args]` to forward, `listB` to list bots.",
            self.registry.names().join(", ")
        )
    }

    fn format_directory<C: ChannelApi>(&self, channel: &mut C) -> String {
        match self.list_bots(channel) {
            Ok(entries) if entries.is_empty() => "no bots registered".to_string(),
            Ok(entries) => entries
                .iter()
                .map(|e| format!("{} ({}) {}", e.name, e.backend_label, e.address))
                .collect::<Vec<_>>()
                .join("\n"),
            Err(err) => format!("ERROR: {err}"),
        }
    }
}

/// Parses the args field of a Hello message back into a directory entry.
pub fn parse_hello(args: &str) -> Option<BotDirectoryEntry> {
    let rest = args.strip_prefix("Hello! IP: ")?;
    let (address, rest) = rest.split_once(". Commands [")?;
    let (_, rest) = rest.split_once("]. Name: ")?;
    let (name, backend_label) = rest.split_once(". Backend: ")?;
    if name.is_empty() {
        return None;
    }
    Some(BotDirectoryEntry {
        name: name.to_string(),
        backend_label: backend_label.to_string(),
        address: address.to_string(),
    })
}
