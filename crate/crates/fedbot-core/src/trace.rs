//! Observable events and the fully ordered trace a simulation produces.
//!
//! Exported as JSON-lines with a stable field order, so two runs of the same
//! scenario and seed serialize byte-identically.

use serde::{Deserialize, Serialize};

use crate::channel::{MessageId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Post,
    Read,
    ClaimSuccess,
    ClaimFail,
    Execute,
    DeliverToUser,
    Timeout,
    Register,
}

/// One observable step. Only the fields that apply to the kind are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: Tick,
    pub bot: String,
    pub event: EventKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<MessageId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub typ: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cmd: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub user: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub body: Option<String>,
}

impl Event {
    fn base(tick: Tick, bot: &str, event: EventKind) -> Event {
        Event {
            tick,
            bot: bot.to_string(),
            event,
            id: None,
            typ: None,
            cmd: None,
            user: None,
            text: None,
            body: None,
        }
    }

    pub fn post(tick: Tick, bot: &str, id: MessageId, typ: &str, cmd: &str, body: &str) -> Event {
        Event {
            id: Some(id),
            typ: Some(typ.to_string()),
            cmd: (!cmd.is_empty()).then(|| cmd.to_string()),
            body: Some(body.to_string()),
            ..Event::base(tick, bot, EventKind::Post)
        }
    }

    pub fn read(tick: Tick, bot: &str, id: MessageId) -> Event {
        Event {
            id: Some(id),
            ..Event::base(tick, bot, EventKind::Read)
        }
    }

    pub fn claim(tick: Tick, bot: &str, id: MessageId, success: bool) -> Event {
        let kind = if success {
            EventKind::ClaimSuccess
        } else {
            EventKind::ClaimFail
        };
        Event {
            id: Some(id),
            ..Event::base(tick, bot, kind)
        }
    }

    pub fn execute(tick: Tick, bot: &str, id: Option<MessageId>, cmd: &str) -> Event {
        Event {
            id,
            cmd: Some(cmd.to_string()),
            ..Event::base(tick, bot, EventKind::Execute)
        }
    }

    pub fn deliver(tick: Tick, bot: &str, user: &str, text: &str) -> Event {
        Event {
            user: Some(user.to_string()),
            text: Some(text.to_string()),
            ..Event::base(tick, bot, EventKind::DeliverToUser)
        }
    }

    pub fn timeout(tick: Tick, bot: &str, user: &str, cmd: &str) -> Event {
        Event {
            user: Some(user.to_string()),
            cmd: Some(cmd.to_string()),
            ..Event::base(tick, bot, EventKind::Timeout)
        }
    }

    pub fn register(tick: Tick, bot: &str, id: MessageId) -> Event {
        Event {
            id: Some(id),
            ..Event::base(tick, bot, EventKind::Register)
        }
    }
}

/// The complete observable output of one scenario run, plus the ids of
/// commands still sitting unclaimed in the channel at the end.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventTrace {
    pub events: Vec<Event>,
    pub unclaimed: Vec<MessageId>,
}

impl EventTrace {
    /// One JSON object per line, stable field order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serialization"));
            out.push('\n');
        }
        out
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.event == kind).count()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.event == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_omits_absent_fields() {
        let ev = Event::read(3, "estudio", 7);
        assert_eq!(
            serde_json::to_string(&ev).unwrap(),
            "{\"tick\":3,\"bot\":\"estudio\",\"event\":\"Read\",\"id\":7}"
        );
    }

    #[test]
    fn jsonl_is_one_line_per_event() {
        let trace = EventTrace {
            events: vec![Event::read(0, "a", 0), Event::read(1, "b", 1)],
            unclaimed: vec![],
        };
        assert_eq!(trace.to_jsonl().lines().count(), 2);
    }
}
