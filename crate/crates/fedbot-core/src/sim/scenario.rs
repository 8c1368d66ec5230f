//! Declarative multi-bot experiment descriptions.
//!
//! A scenario file is a JSON document:
//!
//! ```json
//! {
//!   "channel": {"has_memory": true},
//!   "bots": [
//!     {"name": "estudio", "backend": "Discord", "address": "192.168.1.82",
//!      "admins": ["alice"], "reply_timeout": null,
//!      "commands": ["co2"],
//!      "sensors": [{"kind": "co2", "location": "room23", "seed": 7}],
//!      "online": [{"from": 0}]}
//!   ],
//!   "users": [{"handle": "alice", "name": "Alice", "host": "example", "id": "U123"}],
//!   "workload": [{"tick": 1, "user": "alice", "bot": "estudio", "text": "co2 room23"}],
//!   "horizon": 20,
//!   "seed": 42,
//!   "mode": "random"
//! }
//! ```
//!
//! `reply_timeout: null` (or omitting it) waits forever. A missing `online`
//! list means always online. `users` entries are optional; a workload handle
//! without one gets a default identity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::botcore::{BotConfig, BotState, UserIdentity};
use crate::channel::{ChannelConfig, Tick};
use crate::plugins::{register_command, CommandSpec, Registry, RelayState, SensorModel};

/// Exhaustive enumeration is only tractable for tiny federations.
pub const EXHAUSTIVE_MAX_BOTS: usize = 3;
pub const EXHAUSTIVE_MAX_HORIZON: Tick = 12;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("exhaustive enumeration is intractable: {0}")]
    Intractable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Random,
    Exhaustive,
}

/// Closed-open online window; `to: null` means "until the end".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineInterval {
    pub from: Tick,
    #[serde(default)]
    pub to: Option<Tick>,
}

impl OnlineInterval {
    pub fn contains(&self, t: Tick) -> bool {
        t >= self.from && self.to.is_none_or(|end| t < end)
    }
}

/// A command a bot serves: either one of the stock plugins by name, or a
/// fixture command with a canned reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommandDecl {
    Standard(String),
    Fixed { name: String, reply: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSetup {
    pub kind: String,
    pub location: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin: Option<PinValues>,
}

/// Values to freeze a sensor on. CO2 pins use `co2`/`temperature`/`uhul`,
/// DHT22 pins use `celsius`/`humidity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinValues {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub co2: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uhul: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub celsius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub humidity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotSetup {
    pub name: String,
    #[serde(default)]
    pub backend: String,
    #[serde(default)]
    pub address: String,
    #[serde(default)]
    pub admins: Vec<String>,
    #[serde(default)]
    pub reply_timeout: Option<u64>,
    #[serde(default)]
    pub commands: Vec<CommandDecl>,
    #[serde(default)]
    pub sensors: Vec<SensorSetup>,
    /// Missing list = always online.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<Vec<OnlineInterval>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dir: Option<PathBuf>,
}

impl BotSetup {
    pub fn online_at(&self, t: Tick) -> bool {
        match &self.online {
            None => true,
            Some(intervals) => intervals.iter().any(|iv| iv.contains(t)),
        }
    }

    /// First tick at which the bot is online, if any.
    pub fn first_online(&self) -> Option<Tick> {
        match &self.online {
            None => Some(0),
            Some(intervals) => intervals.iter().map(|iv| iv.from).min(),
        }
    }

    fn sensor(&self, kind: &str) -> Option<&SensorSetup> {
        self.sensors.iter().find(|s| s.kind == kind)
    }

    fn build_model(&self, kind: &str) -> Result<SensorModel, ScenarioError> {
        let setup = self.sensor(kind).ok_or_else(|| {
            ScenarioError::Invalid(format!(
                "bot {:?} declares a {kind} command but no {kind} sensor",
                self.name
            ))
        })?;
        let model = match kind {
            "co2" => {
                let mut m = SensorModel::co2(&setup.location, setup.seed);
                if let Some(pin) = &setup.pin {
                    let (Some(co2), Some(temperature), Some(uhul)) =
                        (pin.co2, pin.temperature, pin.uhul)
                    else {
                        return Err(ScenarioError::Invalid(format!(
                            "co2 pin for bot {:?} needs co2, temperature and uhul",
                            self.name
                        )));
                    };
                    m = m.pin_co2(co2, temperature, uhul);
                }
                m
            }
            "dht22" => {
                let mut m = SensorModel::dht22(&setup.location, setup.seed);
                if let Some(pin) = &setup.pin {
                    let (Some(celsius), Some(humidity)) = (pin.celsius, pin.humidity) else {
                        return Err(ScenarioError::Invalid(format!(
                            "dht22 pin for bot {:?} needs celsius and humidity",
                            self.name
                        )));
                    };
                    m = m.pin_dht22(celsius, humidity);
                }
                m
            }
            other => {
                return Err(ScenarioError::Invalid(format!(
                    "unknown sensor kind {other:?}"
                )))
            }
        };
        Ok(model)
    }

    /// Instantiates the command registry this setup describes.
    pub fn build_registry(&self) -> Result<Registry, ScenarioError> {
        let mut registry = Registry::new();
        for decl in &self.commands {
            let spec = match decl {
                CommandDecl::Standard(name) => match name.as_str() {
                    "hello" => CommandSpec::hello(),
                    "co2" => CommandSpec::co2(self.build_model("co2")?),
                    "temp" => CommandSpec::temp(self.build_model("dht22")?),
                    "relay" => {
                        let state = match &self.state_dir {
                            Some(dir) => RelayState::persistent(dir, &self.name),
                            None => RelayState::volatile(),
                        };
                        CommandSpec::relay(state)
                    }
                    "cam" => {
                        let location = self
                            .sensor("cam")
                            .map(|s| s.location.clone())
                            .unwrap_or_else(|| "cam0".to_string());
                        CommandSpec::cam(location)
                    }
                    other => {
                        return Err(ScenarioError::Invalid(format!(
                            "unknown command {other:?} for bot {:?}",
                            self.name
                        )))
                    }
                },
                CommandDecl::Fixed { name, reply } => CommandSpec::fixed(name, reply),
            };
            register_command(&mut registry, spec)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        Ok(registry)
    }

    pub fn build_config(&self) -> BotConfig {
        BotConfig {
            name: self.name.clone(),
            backend_label: self.backend.clone(),
            address: self.address.clone(),
            admins: self.admins.clone(),
            reply_timeout: self.reply_timeout,
        }
    }

    pub fn instantiate(&self) -> Result<BotState, ScenarioError> {
        Ok(BotState::new(self.build_config(), self.build_registry()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSpec {
    pub handle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub tick: Tick,
    pub user: String,
    pub bot: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub channel: ChannelConfig,
    pub bots: Vec<BotSetup>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    pub workload: Vec<WorkItem>,
    pub horizon: Tick,
    pub seed: u64,
    pub mode: Mode,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_file(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.bots.is_empty() {
            return Err(ScenarioError::Invalid("no bots".into()));
        }
        for (i, b) in self.bots.iter().enumerate() {
            if b.name.is_empty() {
                return Err(ScenarioError::Invalid(format!("bot {i} has no name")));
            }
            if self.bots.iter().filter(|o| o.name == b.name).count() > 1 {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate bot name {:?}",
                    b.name
                )));
            }
            b.build_registry()?;
        }
        for item in &self.workload {
            if item.tick > self.horizon {
                return Err(ScenarioError::Invalid(format!(
                    "workload tick {} past horizon {}",
                    item.tick, self.horizon
                )));
            }
            if !self.bots.iter().any(|b| b.name == item.bot) {
                return Err(ScenarioError::Invalid(format!(
                    "workload targets unknown bot {:?}",
                    item.bot
                )));
            }
        }
        if self.mode == Mode::Exhaustive {
            if self.bots.len() > EXHAUSTIVE_MAX_BOTS {
                return Err(ScenarioError::Intractable(format!(
                    "{} bots exceed the exhaustive bound of {EXHAUSTIVE_MAX_BOTS}",
                    self.bots.len()
                )));
            }
            if self.horizon > EXHAUSTIVE_MAX_HORIZON {
                return Err(ScenarioError::Intractable(format!(
                    "horizon {} exceeds the exhaustive bound of {EXHAUSTIVE_MAX_HORIZON}",
                    self.horizon
                )));
            }
        }
        Ok(())
    }

    /// Resolves a workload handle to a full identity.
    pub fn user_identity(&self, handle: &str) -> UserIdentity {
        match self.users.iter().find(|u| u.handle == handle) {
            Some(spec) => UserIdentity {
                handle: spec.handle.clone(),
                display_name: spec.name.clone().unwrap_or_else(|| spec.handle.clone()),
                host: spec.host.clone().unwrap_or_default(),
                channel_id: spec.id.clone(),
            },
            None => UserIdentity::from_handle(handle),
        }
    }

    pub fn bot_setup(&self, name: &str) -> Option<&BotSetup> {
        self.bots.iter().find(|b| b.name == name)
    }
}
