//! Wire format for the command-and-control channel.
//!
//! Every message posted to the C&C channel is a single-line JSON object with
//! exactly six string-valued keys, always rendered in the same order:
//! `userName`, `userHost`, `frm`, `typ`, `cmd`, `args`. The fixed key order
//! and spacing make transcripts reproducible byte for byte.
//!
//! Reply payloads (the `args` of a `Rep` envelope) are base64-encoded
//! (RFC 4648, standard alphabet, padded) so a reply can carry any byte
//! sequence across text-only chat platforms. Command arguments stay plain
//! text.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three kinds of envelope that travel on the C&C channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvelopeKind {
    /// Presence / registration message ("Hello!").
    Msg,
    /// A command request for some bot to execute.
    Cmd,
    /// A reply carrying an encoded result payload.
    Rep,
}

impl EnvelopeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvelopeKind::Msg => "Msg",
            EnvelopeKind::Cmd => "Cmd",
            EnvelopeKind::Rep => "Rep",
        }
    }

    /// Case-sensitive parse; anything but the three exact tags is rejected.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Msg" => Some(EnvelopeKind::Msg),
            "Cmd" => Some(EnvelopeKind::Cmd),
            "Rep" => Some(EnvelopeKind::Rep),
            _ => None,
        }
    }
}

impl std::fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Errors produced by the wire codec.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    /// The input is not well-formed JSON.
    #[error("malformed JSON: {0}")]
    Parse(String),
    /// The JSON shape is wrong: missing key, extra key, or non-string value.
    #[error("schema violation: {0}")]
    Schema(String),
    /// The six fields are present but semantically inconsistent.
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    /// A reply payload is not valid base64.
    #[error("bad reply payload: {0}")]
    Payload(String),
}

/// The six-field C&C message.
///
/// `frm` is the channel-based identifier of the original requester; it is the
/// correlation key echoed from a `Cmd` into the matching `Rep`. `cmd` is
/// non-empty exactly when `kind` is `Cmd`; a `Rep` carries its result base64
/// encoded in `args`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub user_name: String,
    pub user_host: String,
    pub frm: String,
    pub kind: EnvelopeKind,
    pub cmd: String,
    pub args: String,
}

impl Envelope {
    pub fn new(
        user_name: impl Into<String>,
        user_host: impl Into<String>,
        frm: impl Into<String>,
        kind: EnvelopeKind,
        cmd: impl Into<String>,
        args: impl Into<String>,
    ) -> Result<Self, WireError> {
        let env = Envelope {
            user_name: user_name.into(),
            user_host: user_host.into(),
            frm: frm.into(),
            kind,
            cmd: cmd.into(),
            args: args.into(),
        };
        env.validate()?;
        Ok(env)
    }

    /// Checks the kind/cmd/args consistency rules.
    pub fn validate(&self) -> Result<(), WireError> {
        match self.kind {
            EnvelopeKind::Cmd => {
                if self.cmd.is_empty() {
                    return Err(WireError::InvalidEnvelope(
                        "Cmd envelope with empty cmd".into(),
                    ));
                }
            }
            EnvelopeKind::Msg => {
                if !self.cmd.is_empty() {
                    return Err(WireError::InvalidEnvelope(
                        "Msg envelope with non-empty cmd".into(),
                    ));
                }
            }
            EnvelopeKind::Rep => {
                if !self.cmd.is_empty() {
                    return Err(WireError::InvalidEnvelope(
                        "Rep envelope with non-empty cmd".into(),
                    ));
                }
                if decode_reply_payload(&self.args).is_err() {
                    return Err(WireError::InvalidEnvelope(
                        "Rep args is not an encoded payload".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

const ENVELOPE_KEYS: [&str; 6] = ["userName", "userHost", "frm", "typ", "cmd", "args"];

fn json_string(s: &str) -> String {
    // serde_json string rendering handles all escaping.
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Renders an envelope as the canonical single-line JSON object.
///
/// Output is byte-stable: fixed key order, `": "` after each key, `", "`
/// between pairs. Equal envelopes always encode to identical text.
pub fn encode_envelope(env: &Envelope) -> Result<String, WireError> {
    env.validate()?;
    let values = [
        env.user_name.as_str(),
        env.user_host.as_str(),
        env.frm.as_str(),
        env.kind.as_str(),
        env.cmd.as_str(),
        env.args.as_str(),
    ];
    let pairs: Vec<String> = ENVELOPE_KEYS
        .iter()
        .zip(values.iter())
        .map(|(k, v)| format!("\"{}\": {}", k, json_string(v)))
        .collect();
    Ok(format!("{{{}}}", pairs.join(", ")))
}

/// Parses and validates an envelope.
///
/// All six keys are required, no extra keys are allowed, and every value must
/// be a JSON string. Unknown `typ` values and kind/cmd inconsistencies are
/// rejected.
pub fn decode_envelope(text: &str) -> Result<Envelope, WireError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| WireError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| WireError::Schema("top-level value is not an object".into()))?;

    for key in obj.keys() {
        if !ENVELOPE_KEYS.contains(&key.as_str()) {
            return Err(WireError::Schema(format!("unexpected key {key:?}")));
        }
    }
    let mut fields = Vec::with_capacity(6);
    for key in ENVELOPE_KEYS {
        let v = obj
            .get(key)
            .ok_or_else(|| WireError::Schema(format!("missing key {key:?}")))?;
        let s = v
            .as_str()
            .ok_or_else(|| WireError::Schema(format!("key {key:?} is not a string")))?;
        fields.push(s.to_string());
    }
    let kind = EnvelopeKind::parse(&fields[3])
        .ok_or_else(|| WireError::InvalidEnvelope(format!("unknown typ {:?}", fields[3])))?;

    let env = Envelope {
        user_name: fields[0].clone(),
        user_host: fields[1].clone(),
        frm: fields[2].clone(),
        kind,
        cmd: fields[4].clone(),
        args: fields[5].clone(),
    };
    env.validate()?;
    Ok(env)
}

/// Encodes a raw result as text safe for any chat platform.
pub fn encode_reply_payload(raw: &[u8]) -> String {
    BASE64.encode(raw)
}

/// Inverse of [`encode_reply_payload`].
pub fn decode_reply_payload(text: &str) -> Result<Vec<u8>, WireError> {
    BASE64
        .decode(text)
        .map_err(|e| WireError::Payload(e.to_string()))
}
