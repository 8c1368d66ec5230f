//! Federated chatbots coordinating over a shared command-and-control
//! channel.
//!
//! A federation is a set of independent bots, each serving its own users and
//! devices, that cooperate by posting commands and replies to one common
//! channel. A bot that cannot serve a request forwards it; whichever capable
//! bot deletes the command first owns it, executes, and posts the reply; the
//! original bot routes the reply back to its user. The crate provides the
//! wire codec, the channel store, the per-bot state machine, simulated
//! sensor plugins, and a deterministic simulator that checks the protocol's
//! delivery properties under randomized and exhaustive schedules.

pub mod botcore;
pub mod channel;
pub mod plugins;
pub mod sim;
pub mod trace;
pub mod wire;

pub use botcore::{BotConfig, BotState, UserIdentity};
pub use channel::{Channel, ChannelApi, ChannelConfig, ChannelMessage, Cursor, MessageId, Tick};
pub use plugins::{CommandSpec, Registry, SensorModel};
pub use sim::{check_invariants, enumerate_small_schedules, run_scenario, Scenario};
pub use trace::{Event, EventKind, EventTrace};
pub use wire::{
    decode_envelope, decode_reply_payload, encode_envelope, encode_reply_payload, Envelope,
    EnvelopeKind,
};
