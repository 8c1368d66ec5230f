//! Acceptance suite: the properties a release must hold, one test per
//! criterion, each printing a PASS/FAIL line (run with `-- --nocapture` to
//! see them).

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

use fedbot_core::channel::ChannelConfig;
use fedbot_core::plugins::SensorModel;
use fedbot_core::sim::{
    check_invariants, enumerate_small_schedules, run_scenario, BotSetup, CommandDecl, Mode,
    Scenario, WorkItem,
};
use fedbot_core::trace::{EventKind, EventTrace};
use fedbot_core::wire::{
    decode_envelope, decode_reply_payload, encode_envelope, encode_reply_payload, Envelope,
    EnvelopeKind,
};

fn scenario_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios"))
}

fn load(name: &str) -> Scenario {
    Scenario::from_file(&scenario_dir().join(name)).expect(name)
}

fn criterion<F: FnOnce() + std::panic::UnwindSafe>(n: u32, name: &str, f: F) {
    match std::panic::catch_unwind(f) {
        Ok(()) => println!("ACCEPTANCE criterion {n} ({name}): PASS"),
        Err(e) => {
            println!("ACCEPTANCE criterion {n} ({name}): FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

fn replies_to(trace: &EventTrace, user: &str) -> Vec<(u64, String)> {
    trace
        .of_kind(EventKind::DeliverToUser)
        .filter(|e| e.user.as_deref() == Some(user))
        .filter(|e| !e.text.as_deref().unwrap_or("").starts_with("TIMEOUT: "))
        .map(|e| (e.tick, e.text.clone().unwrap_or_default()))
        .collect()
}

const PAPER_CMD_JSON: &str = "{\"userName\": \"someUserName\", \"userHost\": \"someUserHost\", \"frm\": \"someUserIdentifier\", \"typ\": \"Cmd\", \"cmd\": \"co2\", \"args\": \"room23\"}";
const PAPER_CO2_DICT: &str = "{'co2': 1099, 'temperature': 26, 'TT': 66, 'SS': 0, 'UhUl': 4608}";

#[test]
fn criterion_1_transcript_fidelity() {
    criterion(1, "transcript fidelity", || {
        let started = Instant::now();
        let sc = load("two_bot_co2.json");
        let trace = run_scenario(&sc).unwrap();

        let cmd_posts: Vec<_> = trace
            .of_kind(EventKind::Post)
            .filter(|e| e.typ.as_deref() == Some("Cmd"))
            .collect();
        assert_eq!(cmd_posts.len(), 1);
        assert_eq!(cmd_posts[0].body.as_deref(), Some(PAPER_CMD_JSON));

        let rep_posts: Vec<_> = trace
            .of_kind(EventKind::Post)
            .filter(|e| e.typ.as_deref() == Some("Rep"))
            .collect();
        assert_eq!(rep_posts.len(), 1);
        let rep_body = rep_posts[0].body.as_deref().unwrap();
        assert!(rep_body.contains("\"typ\": \"Rep\", \"cmd\": \"\""));
        let rep = decode_envelope(rep_body).unwrap();
        assert_eq!(rep.frm, "someUserIdentifier");
        assert_eq!(
            String::from_utf8(decode_reply_payload(&rep.args).unwrap()).unwrap(),
            PAPER_CO2_DICT
        );

        let deliveries = replies_to(&trace, "someUser");
        assert_eq!(deliveries.len(), 1);
        assert_eq!(deliveries[0].1, PAPER_CO2_DICT);

        assert!(check_invariants(&trace, &sc).all_pass());
        assert!(
            started.elapsed() < Duration::from_secs(1),
            "took {:?}",
            started.elapsed()
        );
    });
}

/// Command id and per-trace claim/execute counts for the single forwarded
/// command of a claim-race scenario.
fn single_cmd_stats(trace: &EventTrace) -> (usize, usize) {
    let cmd_ids: Vec<u64> = trace
        .of_kind(EventKind::Post)
        .filter(|e| e.typ.as_deref() == Some("Cmd"))
        .filter_map(|e| e.id)
        .collect();
    assert_eq!(cmd_ids.len(), 1, "exactly one command posted");
    let id = cmd_ids[0];
    let claims = trace
        .of_kind(EventKind::ClaimSuccess)
        .filter(|e| e.id == Some(id))
        .count();
    let executes = trace
        .of_kind(EventKind::Execute)
        .filter(|e| e.id == Some(id))
        .count();
    (claims, executes)
}

fn five_bots_hundred_commands(seed: u64) -> Scenario {
    let bots: Vec<BotSetup> = (0..5)
        .map(|i| BotSetup {
            name: format!("bot{i}"),
            backend: "Sim".into(),
            address: format!("10.0.0.{i}"),
            admins: vec!["alice".into()],
            reply_timeout: None,
            commands: (0..20)
                .map(|k| CommandDecl::Fixed {
                    name: format!("job-{i}-{k}"),
                    reply: format!("done-{i}-{k}"),
                })
                .collect(),
            sensors: vec![],
            online: None,
            state_dir: None,
        })
        .collect();
    // Every command targets a bot that does not own it, so all 100 are
    // forwarded and claimed over the channel.
    let workload: Vec<WorkItem> = (0..100)
        .map(|j| {
            let owner = j % 5;
            let k = j / 5;
            let origin = (owner + 1 + (j % 4)) % 5;
            WorkItem {
                tick: (j % 20) as u64,
                user: "alice".into(),
                bot: format!("bot{origin}"),
                text: format!("job-{owner}-{k}"),
            }
        })
        .collect();
    Scenario {
        channel: ChannelConfig { has_memory: true },
        bots,
        users: vec![],
        workload,
        horizon: 40,
        seed,
        mode: Mode::Random,
    }
}

#[test]
fn criterion_2_at_most_once_oracle() {
    criterion(2, "at-most-once oracle", || {
        let started = Instant::now();

        for name in ["claim_race_2.json", "claim_race_3.json"] {
            let sc = load(name);
            let traces = enumerate_small_schedules(&sc).unwrap();
            assert!(!traces.is_empty(), "{name}: no schedules");
            for (i, trace) in traces.iter().enumerate() {
                let (claims, executes) = single_cmd_stats(trace);
                assert_eq!(claims, 1, "{name} schedule {i}: claim count");
                assert_eq!(executes, 1, "{name} schedule {i}: execute count");
                assert!(
                    check_invariants(trace, &sc).all_pass(),
                    "{name} schedule {i}: invariants"
                );
            }
            println!("  {name}: {} interleavings, all exactly-once", traces.len());
        }

        let sc = load("claim_race_0.json");
        let traces = enumerate_small_schedules(&sc).unwrap();
        for trace in &traces {
            assert_eq!(trace.count(EventKind::Execute), 0);
            assert_eq!(trace.unclaimed.len(), 1);
        }
        println!(
            "  claim_race_0.json: {} interleavings, zero executions",
            traces.len()
        );

        for seed in 0..1000u64 {
            let sc = five_bots_hundred_commands(seed);
            let trace = run_scenario(&sc).unwrap();
            let report = check_invariants(&trace, &sc);
            assert!(
                report.all_pass(),
                "seed {seed}: {:?}",
                report.failures().map(|c| &c.name).collect::<Vec<_>>()
            );
            assert_eq!(trace.count(EventKind::Execute), 100, "seed {seed}");
            assert_eq!(replies_to(&trace, "alice").len(), 100, "seed {seed}");
        }

        assert!(
            started.elapsed() < Duration::from_secs(10),
            "took {:?}",
            started.elapsed()
        );
    });
}

#[test]
fn criterion_3_eventual_delivery() {
    criterion(3, "eventual delivery", || {
        let mut sc = load("eventual_delivery.json");
        for seed in 0..200u64 {
            sc.seed = seed;
            let trace = run_scenario(&sc).unwrap();
            let deliveries = replies_to(&trace, "alice");
            assert_eq!(deliveries.len(), 1, "seed {seed}");
            assert!(
                deliveries[0].0 >= 50,
                "seed {seed}: delivered before the owner came online"
            );
            assert!(trace.unclaimed.is_empty(), "seed {seed}");
            assert!(check_invariants(&trace, &sc).all_pass(), "seed {seed}");
        }

        let mut sc = load("no_memory_unclaimed.json");
        for seed in 0..200u64 {
            sc.seed = seed;
            let trace = run_scenario(&sc).unwrap();
            assert_eq!(trace.count(EventKind::Execute), 0, "seed {seed}");
            assert!(replies_to(&trace, "alice").is_empty(), "seed {seed}");
            assert_eq!(trace.unclaimed.len(), 1, "seed {seed}: command unclaimed");
            assert!(check_invariants(&trace, &sc).all_pass(), "seed {seed}");
        }
    });
}

#[test]
fn criterion_4_broadcast_completeness() {
    criterion(4, "broadcast completeness", || {
        for n in 1..=3usize {
            let mut sc = load(&format!("broadcast_{n}.json"));
            for seed in 0..200u64 {
                sc.seed = seed;
                let trace = run_scenario(&sc).unwrap();
                let deliveries = replies_to(&trace, "alice");
                assert_eq!(deliveries.len(), n, "n={n} seed {seed}");
                // All within the collection window (posted at 0, window 10).
                assert!(
                    deliveries.iter().all(|(t, _)| *t <= 10),
                    "n={n} seed {seed}: delivery outside the window"
                );
                assert_eq!(trace.count(EventKind::Execute), n, "n={n} seed {seed}");
                assert_eq!(trace.count(EventKind::Timeout), 0, "n={n} seed {seed}");
                assert!(check_invariants(&trace, &sc).all_pass(), "n={n} seed {seed}");
            }
        }
    });
}

#[test]
fn criterion_5_codec_properties() {
    criterion(5, "codec properties", || {
        let mut rng = Xoshiro256StarStar::seed_from_u64(0xfedb07);
        let pool: Vec<char> = ('\u{20}'..='\u{7e}')
            .chain(['\n', '\t', '"', '\\', 'ñ', 'é', '€', '中', '🦀'])
            .collect();
        let random_text = |rng: &mut Xoshiro256StarStar, max: usize| -> String {
            let len = rng.random_range(0..max);
            (0..len)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect()
        };

        for i in 0..1000 {
            let kind = match i % 3 {
                0 => EnvelopeKind::Msg,
                1 => EnvelopeKind::Cmd,
                _ => EnvelopeKind::Rep,
            };
            let cmd = if kind == EnvelopeKind::Cmd {
                format!("c{}", random_text(&mut rng, 8))
            } else {
                String::new()
            };
            let args = match kind {
                EnvelopeKind::Rep => {
                    let n = rng.random_range(0..64);
                    let raw: Vec<u8> = (0..n).map(|_| rng.random_range(0..=255) as u8).collect();
                    encode_reply_payload(&raw)
                }
                _ => random_text(&mut rng, 32),
            };
            let env = Envelope {
                user_name: random_text(&mut rng, 16),
                user_host: random_text(&mut rng, 16),
                frm: random_text(&mut rng, 16),
                kind,
                cmd,
                args,
            };
            let text = encode_envelope(&env).unwrap();
            assert_eq!(decode_envelope(&text).unwrap(), env, "case {i}");
        }

        for i in 0..1000 {
            let n = rng.random_range(0..256);
            let raw: Vec<u8> = (0..n).map(|_| rng.random_range(0..=255) as u8).collect();
            assert_eq!(
                decode_reply_payload(&encode_reply_payload(&raw)).unwrap(),
                raw,
                "payload case {i}"
            );
        }

        let mut dht = SensorModel::dht22("salon", 99);
        for i in 0..1000 {
            let line = fedbot_core::plugins::temp_read("", &mut dht).unwrap();
            let rest = line.strip_prefix("Temp: ").unwrap();
            let (f, rest) = rest.split_once(" F / ").unwrap();
            let (c, h) = rest.split_once(" C    Humidity: ").unwrap();
            let (f, c, h): (f64, f64, f64) =
                (f.parse().unwrap(), c.parse().unwrap(), h.parse().unwrap());
            assert!(
                (f - (1.8 * c + 32.0)).abs() <= 0.05,
                "sample {i}: {line:?}"
            );
            assert!((0.0..=100.0).contains(&h), "sample {i}: {line:?}");
        }

        let mut co2 = SensorModel::co2("room23", 99);
        for i in 0..1000 {
            let text = fedbot_core::plugins::co2_read("", &mut co2).unwrap();
            let env_like: Vec<i64> = text
                .trim_matches(|c| c == '{' || c == '}')
                .split(", ")
                .map(|kv| kv.split_once(": ").unwrap().1.parse().unwrap())
                .collect();
            let (co2v, temperature, tt, ss, uhul) = (
                env_like[0],
                env_like[1],
                env_like[2],
                env_like[3],
                env_like[4],
            );
            assert_eq!(tt, temperature + 40, "sample {i}");
            assert_eq!(ss, 0, "sample {i}");
            assert!((400..=5000).contains(&co2v), "sample {i}");
            assert!((0..65536).contains(&uhul), "sample {i}");
        }
    });
}

#[test]
fn criterion_6_determinism() {
    criterion(6, "determinism", || {
        let mut names: Vec<_> = std::fs::read_dir(scenario_dir())
            .unwrap()
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".json"))
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let sc = load(&name);
            let a = run_scenario(&sc).unwrap().to_jsonl();
            let b = run_scenario(&sc).unwrap().to_jsonl();
            assert_eq!(a, b, "{name}: traces differ between identical runs");
            assert!(!a.is_empty(), "{name}: empty trace");
        }
    });
}

#[test]
fn criterion_7_timeout_semantics() {
    criterion(7, "timeout semantics", || {
        let mut sc = load("timeout.json");
        for seed in 0..200u64 {
            sc.seed = seed;
            let trace = run_scenario(&sc).unwrap();
            let timeouts: Vec<_> = trace.of_kind(EventKind::Timeout).collect();
            assert_eq!(timeouts.len(), 1, "seed {seed}");
            assert_eq!(timeouts[0].tick, 10, "seed {seed}: timeout tick");
            let delivered: Vec<_> = trace
                .of_kind(EventKind::DeliverToUser)
                .filter(|e| e.text.as_deref().unwrap_or("").starts_with("TIMEOUT: "))
                .collect();
            assert_eq!(delivered.len(), 1, "seed {seed}");
            assert_eq!(delivered[0].tick, 10, "seed {seed}");
            assert_eq!(delivered[0].text.as_deref(), Some("TIMEOUT: co2"));
            assert!(check_invariants(&trace, &sc).all_pass(), "seed {seed}");
        }

        let mut sc = load("answered.json");
        for seed in 0..200u64 {
            sc.seed = seed;
            let trace = run_scenario(&sc).unwrap();
            assert_eq!(trace.count(EventKind::Timeout), 0, "seed {seed}");
            let deliveries = replies_to(&trace, "alice");
            assert_eq!(deliveries.len(), 1, "seed {seed}");
            assert!(deliveries[0].0 < 10, "seed {seed}: answered late");
            assert!(check_invariants(&trace, &sc).all_pass(), "seed {seed}");
        }
    });
}

// The forged fixture must fail its invariant check; the CLI turns this into
// exit code 1 (covered in the CLI crate's tests).
#[test]
fn negative_control_forged_scenario_fails() {
    let sc = load("forged_short_horizon.json");
    let trace = run_scenario(&sc).unwrap();
    let report = check_invariants(&trace, &sc);
    assert!(!report.all_pass());
    assert!(report.failures().any(|c| c.name == "delivery-guarantee"));
}
