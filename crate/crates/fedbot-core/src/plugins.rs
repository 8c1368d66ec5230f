//! Commands a bot can serve, and the simulated devices behind them.
//!
//! The stock commands mirror a small home/lab deployment: a CO2 sensor, a
//! temperature/humidity sensor, a relay switch, a webcam placeholder, and the
//! classic `hello`. Sensor values come from a seeded bounded random walk so
//! traces look physical yet replay identically for the same seed. A sensor
//! can also be pinned to a fixed reading for reproducible transcripts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use thiserror::Error;

use crate::channel::Tick;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PluginError {
    #[error("command {0:?} is already registered")]
    DuplicateCommand(String),
    #[error("command name {0:?} is reserved")]
    ReservedName(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandlerError {
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
    #[error("bad argument {0:?}")]
    BadArgument(String),
    #[error("{0}")]
    Io(String),
}

/// Command names the front-door grammar reserves for itself.
pub const RESERVED_NAMES: [&str; 2] = ["fw", "listB"];

// ---------------------------------------------------------------------------
// Sensor models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    Co2,
    Dht22,
}

/// One reading of the CO2 sensor's full register set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Co2Reading {
    pub co2: i64,
    pub temperature: i64,
    pub tt: i64,
    pub ss: i64,
    pub uhul: i64,
}

impl fmt::Display for Co2Reading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{'co2': {}, 'temperature': {}, 'TT': {}, 'SS': {}, 'UhUl': {}}}",
            self.co2, self.temperature, self.tt, self.ss, self.uhul
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SensorValues {
    Co2 { ppm: f64, temp_c: f64, uhul: f64 },
    Dht { temp_c: f64, humidity: f64 },
}

/// A deterministic simulated sensor. Identical seed and call sequence yield
/// identical readings.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub seed: u64,
    pub location: String,
    pub kind: SensorKind,
    rng: Xoshiro256StarStar,
    values: SensorValues,
    pinned: bool,
}

impl SensorModel {
    pub fn co2(location: impl Into<String>, seed: u64) -> Self {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let values = SensorValues::Co2 {
            ppm: 450.0 + rng.random_range(0.0..800.0),
            temp_c: 18.0 + rng.random_range(0.0..10.0),
            uhul: rng.random_range(0.0..65535.0),
        };
        SensorModel {
            seed,
            location: location.into(),
            kind: SensorKind::Co2,
            rng,
            values,
            pinned: false,
        }
    }

    pub fn dht22(location: impl Into<String>, seed: u64) -> Self {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let values = SensorValues::Dht {
            temp_c: 15.0 + rng.random_range(0.0..12.0),
            humidity: 30.0 + rng.random_range(0.0..40.0),
        };
        SensorModel {
            seed,
            location: location.into(),
            kind: SensorKind::Dht22,
            rng,
            values,
            pinned: false,
        }
    }

    /// Freezes the CO2 model on an exact register set.
    pub fn pin_co2(mut self, co2: i64, temperature: i64, uhul: i64) -> Self {
        self.values = SensorValues::Co2 {
            ppm: co2 as f64,
            temp_c: temperature as f64,
            uhul: uhul as f64,
        };
        self.pinned = true;
        self
    }

    /// Freezes the DHT22 model on an exact reading.
    pub fn pin_dht22(mut self, celsius: f64, humidity: f64) -> Self {
        self.values = SensorValues::Dht {
            temp_c: celsius,
            humidity,
        };
        self.pinned = true;
        self
    }

    fn serves(&self, args: &str) -> bool {
        args.is_empty() || args == self.location
    }

    fn read_co2(&mut self) -> Co2Reading {
        let SensorValues::Co2 { ppm, temp_c, uhul } = &mut self.values else {
            panic!("read_co2 on a non-CO2 model");
        };
        if !self.pinned {
            *ppm = (*ppm + self.rng.random_range(-5.0..=5.0)).clamp(400.0, 5000.0);
            *temp_c = (*temp_c + self.rng.random_range(-0.3..=0.3)).clamp(5.0, 40.0);
            *uhul = (*uhul + self.rng.random_range(-256.0..=256.0)).clamp(0.0, 65535.0);
        }
        let temperature = temp_c.round() as i64;
        Co2Reading {
            co2: ppm.round() as i64,
            temperature,
            tt: temperature + 40,
            ss: 0,
            uhul: uhul.round() as i64,
        }
    }

    fn read_dht(&mut self) -> (f64, f64) {
        let SensorValues::Dht { temp_c, humidity } = &mut self.values else {
            panic!("read_dht on a non-DHT model");
        };
        if !self.pinned {
            *temp_c = (*temp_c + self.rng.random_range(-0.3..=0.3)).clamp(-5.0, 45.0);
            *humidity = (*humidity + self.rng.random_range(-1.0..=1.0)).clamp(0.0, 100.0);
        }
        (*temp_c, *humidity)
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

// ---------------------------------------------------------------------------
// Relay and persistence
// ---------------------------------------------------------------------------

/// Flat key-value persistence file, one per bot (`<name>.state`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateFile {
    path: PathBuf,
}

impl StateFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        StateFile { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        if let Ok(text) = std::fs::read_to_string(&self.path) {
            for line in text.lines() {
                if let Some((k, v)) = line.split_once('=') {
                    map.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        }
        map
    }

    pub fn set(&self, key: &str, value: &str) -> Result<(), HandlerError> {
        let mut map = self.load();
        map.insert(key.to_string(), value.to_string());
        let mut text = String::new();
        for (k, v) in &map {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        std::fs::write(&self.path, text).map_err(|e| HandlerError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayState {
    pub on: bool,
    pub persisted: bool,
    store: Option<StateFile>,
}

impl RelayState {
    pub fn volatile() -> Self {
        RelayState {
            on: false,
            persisted: false,
            store: None,
        }
    }

    /// Backs the relay by `<dir>/<bot>.state`; a previously saved state is
    /// restored immediately.
    pub fn persistent(dir: &Path, bot: &str) -> Self {
        let store = StateFile::new(dir.join(format!("{bot}.state")));
        let on = store
            .load()
            .get("relay.on")
            .map(|v| v == "true")
            .unwrap_or(false);
        RelayState {
            on,
            persisted: true,
            store: Some(store),
        }
    }

    fn set(&mut self, on: bool) -> Result<(), HandlerError> {
        self.on = on;
        if let Some(store) = &self.store {
            store.set("relay.on", if on { "true" } else { "false" })?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Command handlers
// ---------------------------------------------------------------------------

pub fn hello_cmd(_args: &str) -> String {
    "Hello, world!".to_string()
}

pub fn co2_read(args: &str, model: &mut SensorModel) -> Result<String, HandlerError> {
    if !model.serves(args) {
        return Err(HandlerError::UnknownSensor(args.to_string()));
    }
    Ok(model.read_co2().to_string())
}

pub fn temp_read(args: &str, model: &mut SensorModel) -> Result<String, HandlerError> {
    if !model.serves(args) {
        return Err(HandlerError::UnknownSensor(args.to_string()));
    }
    let (temp_c, humidity) = model.read_dht();
    // Fahrenheit is derived from the displayed Celsius so the printed pair
    // always satisfies the conversion within rounding.
    let c = round1(temp_c);
    let f = round1(1.8 * c + 32.0);
    let h = round1(humidity);
    Ok(format!("Temp: {f:.1} F / {c:.1} C    Humidity: {h:.1}"))
}

pub fn relay_switch(args: &str, state: &mut RelayState) -> Result<String, HandlerError> {
    match args {
        "on" => {
            state.set(true)?;
            Ok("relay is now on".to_string())
        }
        "off" => {
            state.set(false)?;
            Ok("relay is now off".to_string())
        }
        "status" => Ok(format!(
            "relay is {}",
            if state.on { "on" } else { "off" }
        )),
        other => Err(HandlerError::BadArgument(other.to_string())),
    }
}

pub fn cam_read(args: &str, location: &str, now: Tick) -> Result<String, HandlerError> {
    if !(args.is_empty() || args == location) {
        return Err(HandlerError::UnknownSensor(args.to_string()));
    }
    Ok(format!("image:{location}:{now}"))
}

/// The executable behind a command. Kept as data (no closures) so bot state
/// can be cloned when the simulator forks schedules.
#[derive(Debug, Clone, PartialEq)]
pub enum Handler {
    Hello,
    Co2(SensorModel),
    Temp(SensorModel),
    Relay(RelayState),
    Cam { location: String },
    /// A canned reply; handy for scenario fixtures.
    Fixed { reply: String },
}

/// A named command with argument validator and handler: the plugin unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSpec {
    pub name: String,
    pub description: String,
    handler: Handler,
}

impl CommandSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, handler: Handler) -> Self {
        CommandSpec {
            name: name.into(),
            description: description.into(),
            handler,
        }
    }

    pub fn hello() -> Self {
        CommandSpec::new("hello", "say hello", Handler::Hello)
    }

    pub fn co2(model: SensorModel) -> Self {
        let d = format!("CO2 sensor at {}", model.location);
        CommandSpec::new("co2", d, Handler::Co2(model))
    }

    pub fn temp(model: SensorModel) -> Self {
        let d = format!("temperature/humidity sensor at {}", model.location);
        CommandSpec::new("temp", d, Handler::Temp(model))
    }

    pub fn relay(state: RelayState) -> Self {
        CommandSpec::new("relay", "switch the relay on/off", Handler::Relay(state))
    }

    pub fn cam(location: impl Into<String>) -> Self {
        let location = location.into();
        let d = format!("webcam at {location}");
        CommandSpec::new("cam", d, Handler::Cam { location })
    }

    pub fn fixed(name: impl Into<String>, reply: impl Into<String>) -> Self {
        CommandSpec::new(name, "fixed reply", Handler::Fixed {
            reply: reply.into(),
        })
    }

    /// Pure predicate: would this command accept these arguments?
    pub fn validate_args(&self, args: &str) -> bool {
        match &self.handler {
            Handler::Hello | Handler::Fixed { .. } => true,
            Handler::Co2(m) | Handler::Temp(m) => m.serves(args),
            Handler::Relay(_) => matches!(args, "on" | "off" | "status"),
            Handler::Cam { location } => args.is_empty() || args == location,
        }
    }

    pub fn invoke(&mut self, args: &str, now: Tick) -> Result<String, HandlerError> {
        match &mut self.handler {
            Handler::Hello => Ok(hello_cmd(args)),
            Handler::Co2(model) => co2_read(args, model),
            Handler::Temp(model) => temp_read(args, model),
            Handler::Relay(state) => relay_switch(args, state),
            Handler::Cam { location } => cam_read(args, location, now),
            Handler::Fixed { reply } => Ok(reply.clone()),
        }
    }
}

/// The set of commands a bot serves, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    commands: BTreeMap<String, CommandSpec>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn get(&self, name: &str) -> Option<&CommandSpec> {
        self.commands.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut CommandSpec> {
        self.commands.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.commands.contains_key(name)
    }

    /// Registered names, sorted. This is the list a Hello message announces.
    pub fn names(&self) -> Vec<&str> {
        self.commands.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CommandSpec> {
        self.commands.values()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }
}

/// Adds a command to the registry. Names must be unique and must not collide
/// with the reserved front-door words.
pub fn register_command(registry: &mut Registry, spec: CommandSpec) -> Result<(), PluginError> {
    if RESERVED_NAMES.contains(&spec.name.as_str()) || spec.name.starts_with("all:") {
        return Err(PluginError::ReservedName(spec.name));
    }
    if registry.commands.contains_key(&spec.name) {
        return Err(PluginError::DuplicateCommand(spec.name));
    }
    registry.commands.insert(spec.name.clone(), spec);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_then_names_lists_it() {
        let mut reg = Registry::new();
        register_command(&mut reg, CommandSpec::hello()).unwrap();
        assert_eq!(reg.names(), vec!["hello"]);
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut reg = Registry::new();
        register_command(&mut reg, CommandSpec::hello()).unwrap();
        let err = register_command(&mut reg, CommandSpec::hello()).unwrap_err();
        assert_eq!(err, PluginError::DuplicateCommand("hello".into()));
    }

    #[test]
    fn reserved_names_are_rejected() {
        let mut reg = Registry::new();
        for name in RESERVED_NAMES {
            let err = register_command(&mut reg, CommandSpec::fixed(name, "x")).unwrap_err();
            assert_eq!(err, PluginError::ReservedName(name.into()));
        }
        assert!(register_command(&mut reg, CommandSpec::fixed("all:temp", "x")).is_err());
    }

    #[test]
    fn co2_validator_accepts_only_its_location_or_default() {
        let spec = CommandSpec::co2(SensorModel::co2("room23", 1));
        assert!(spec.validate_args("room23"));
        assert!(spec.validate_args(""));
        assert!(!spec.validate_args("room24"));
    }

    #[test]
    fn pinned_co2_reproduces_the_reference_reading() {
        let mut model = SensorModel::co2("room23", 0).pin_co2(1099, 26, 4608);
        let text = co2_read("room23", &mut model).unwrap();
        assert_eq!(
            text,
            "{'co2': 1099, 'temperature': 26, 'TT': 66, 'SS': 0, 'UhUl': 4608}"
        );
        // Pinned readings do not drift.
        assert_eq!(co2_read("", &mut model).unwrap(), text);
    }

    #[test]
    fn co2_register_relations_hold_across_readings() {
        let mut model = SensorModel::co2("lab", 42);
        for _ in 0..1000 {
            let r = model.read_co2();
            assert_eq!(r.tt, r.temperature + 40);
            assert_eq!(r.ss, 0);
            assert!((400..=5000).contains(&r.co2), "co2 {}", r.co2);
            assert!((0..65536).contains(&r.uhul), "uhul {}", r.uhul);
        }
    }

    #[test]
    fn co2_unknown_location_errors() {
        let mut model = SensorModel::co2("room23", 1);
        let err = co2_read("room99", &mut model).unwrap_err();
        assert_eq!(err, HandlerError::UnknownSensor("room99".into()));
    }

    #[test]
    fn temp_reproduces_the_reference_line_when_pinned() {
        let mut model = SensorModel::dht22("salon", 0).pin_dht22(21.0, 57.1);
        assert_eq!(
            temp_read("", &mut model).unwrap(),
            "Temp: 69.8 F / 21.0 C    Humidity: 57.1"
        );
    }

    #[test]
    fn temp_freezing_point_converts_exactly() {
        let mut model = SensorModel::dht22("out", 0).pin_dht22(0.0, 50.0);
        assert_eq!(
            temp_read("", &mut model).unwrap(),
            "Temp: 32.0 F / 0.0 C    Humidity: 50.0"
        );
    }

    fn parse_temp_line(line: &str) -> (f64, f64, f64) {
        let rest = line.strip_prefix("Temp: ").unwrap();
        let (f, rest) = rest.split_once(" F / ").unwrap();
        let (c, rest) = rest.split_once(" C    Humidity: ").unwrap();
        (
            f.parse().unwrap(),
            c.parse().unwrap(),
            rest.parse().unwrap(),
        )
    }

    #[test]
    fn temp_lines_satisfy_the_fahrenheit_relation() {
        let mut model = SensorModel::dht22("salon", 7);
        for _ in 0..1000 {
            let line = temp_read("salon", &mut model).unwrap();
            let (f, c, h) = parse_temp_line(&line);
            assert!(
                (f - (1.8 * c + 32.0)).abs() <= 0.05,
                "relation violated: {line}"
            );
            assert!((0.0..=100.0).contains(&h), "humidity range: {line}");
        }
    }

    #[test]
    fn sensor_readings_are_deterministic_per_seed() {
        let mut a = SensorModel::dht22("x", 9);
        let mut b = SensorModel::dht22("x", 9);
        for _ in 0..50 {
            assert_eq!(temp_read("", &mut a).unwrap(), temp_read("", &mut b).unwrap());
        }
        let mut c = SensorModel::co2("x", 11);
        let mut d = SensorModel::co2("x", 11);
        for _ in 0..50 {
            assert_eq!(co2_read("", &mut c).unwrap(), co2_read("", &mut d).unwrap());
        }
    }

    #[test]
    fn relay_switches_and_reports() {
        let mut state = RelayState::volatile();
        assert_eq!(relay_switch("on", &mut state).unwrap(), "relay is now on");
        assert!(state.on);
        assert_eq!(relay_switch("status", &mut state).unwrap(), "relay is on");
        let snapshot = state.clone();
        assert_eq!(relay_switch("status", &mut state).unwrap(), "relay is on");
        assert_eq!(state, snapshot, "status must be side-effect-free");
        assert_eq!(relay_switch("off", &mut state).unwrap(), "relay is now off");
        assert_eq!(relay_switch("status", &mut state).unwrap(), "relay is off");
    }

    #[test]
    fn relay_rejects_unknown_argument() {
        let mut state = RelayState::volatile();
        let err = relay_switch("toggle", &mut state).unwrap_err();
        assert_eq!(err, HandlerError::BadArgument("toggle".into()));
    }

    #[test]
    fn relay_state_survives_restart_when_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = RelayState::persistent(dir.path(), "estudio");
        relay_switch("on", &mut state).unwrap();
        drop(state);

        let mut restarted = RelayState::persistent(dir.path(), "estudio");
        assert_eq!(
            relay_switch("status", &mut restarted).unwrap(),
            "relay is on"
        );
        let text = std::fs::read_to_string(dir.path().join("estudio.state")).unwrap();
        assert_eq!(text, "relay.on=true\n");
    }

    #[test]
    fn hello_ignores_arguments() {
        assert_eq!(hello_cmd(""), "Hello, world!");
        assert_eq!(hello_cmd("anything"), "Hello, world!");
    }

    #[test]
    fn cam_returns_placeholder_reference() {
        assert_eq!(cam_read("", "room23", 7).unwrap(), "image:room23:7");
        assert!(cam_read("room99", "room23", 7).is_err());
    }
}
