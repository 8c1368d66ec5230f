//! `fedbot sim`: run a scenario, check the protocol invariants, summarize.

use std::path::Path;

use anyhow::Result;
use fedbot_core::sim::{
    check_invariants, enumerate_small_schedules, run_scenario, summarize, InvariantReport, Mode,
    Scenario,
};
use fedbot_core::trace::EventTrace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT_FAILURE: i32 = 1;
pub const EXIT_SCENARIO_ERROR: i32 = 2;

pub struct SimArgs<'a> {
    pub scenario: &'a Path,
    pub seed: Option<u64>,
    pub trace_out: Option<&'a Path>,
    pub json: bool,
}

pub fn cmd_sim(args: &SimArgs) -> Result<i32> {
    let mut sc = match Scenario::from_file(args.scenario) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_SCENARIO_ERROR);
        }
    };

    // Seed precedence: --seed, then FEDBOT_SEED, then the scenario file.
    if let Some(seed) = args.seed {
        sc.seed = seed;
    } else if let Ok(env_seed) = std::env::var("FEDBOT_SEED") {
        match env_seed.parse::<u64>() {
            Ok(seed) => sc.seed = seed,
            Err(_) => {
                eprintln!("error: FEDBOT_SEED={env_seed:?} is not a number");
                return Ok(EXIT_SCENARIO_ERROR);
            }
        }
    }

    let outcome = match sc.mode {
        Mode::Random => {
            let trace = match run_scenario(&sc) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(EXIT_SCENARIO_ERROR);
                }
            };
            let report = check_invariants(&trace, &sc);
            Outcome {
                traces_checked: 1,
                failing_traces: usize::from(!report.all_pass()),
                representative: trace,
                report,
            }
        }
        Mode::Exhaustive => {
            let traces = match enumerate_small_schedules(&sc) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(EXIT_SCENARIO_ERROR);
                }
            };
            let mut failing = 0;
            let mut first_failing_report = None;
            for trace in &traces {
                let report = check_invariants(trace, &sc);
                if !report.all_pass() {
                    failing += 1;
                    first_failing_report.get_or_insert(report);
                }
            }
            let representative = traces.first().cloned().unwrap_or_default();
            let report =
                first_failing_report.unwrap_or_else(|| check_invariants(&representative, &sc));
            Outcome {
                traces_checked: traces.len(),
                failing_traces: failing,
                representative,
                report,
            }
        }
    };

    if let Some(path) = args.trace_out {
        std::fs::write(path, outcome.representative.to_jsonl())?;
    }

    print_outcome(&sc, &outcome, args.json);
    Ok(if outcome.failing_traces == 0 {
        EXIT_OK
    } else {
        EXIT_INVARIANT_FAILURE
    })
}

struct Outcome {
    traces_checked: usize,
    failing_traces: usize,
    representative: EventTrace,
    report: InvariantReport,
}

fn print_outcome(sc: &Scenario, outcome: &Outcome, json: bool) {
    let summary = summarize(&outcome.representative);
    if json {
        for check in &outcome.report.checks {
            let line = serde_json::json!({
                "invariant": check.name,
                "pass": check.passed,
                "detail": check.detail,
                "offending": check.offending,
            });
            println!("{line}");
        }
        let line = serde_json::json!({
            "summary": summary,
            "mode": if sc.mode == Mode::Random { "random" } else { "exhaustive" },
            "seed": sc.seed,
            "interleavings": outcome.traces_checked,
            "failing_interleavings": outcome.failing_traces,
            "all_pass": outcome.failing_traces == 0,
        });
        println!("{line}");
        return;
    }

    println!(
        "mode {:?}, seed {}, {} interleaving(s) checked",
        sc.mode, sc.seed, outcome.traces_checked
    );
    println!(
        "events {}, executions {}, deliveries {}, timeouts {}, unclaimed {}",
        outcome.representative.events.len(),
        summary.executions,
        summary.deliveries,
        summary.timeouts,
        summary.unclaimed
    );
    for check in &outcome.report.checks {
        if check.passed {
            println!("ok   {} — {}", check.name, check.detail);
        } else if check.offending.is_empty() {
            println!("FAIL {} — {}", check.name, check.detail);
        } else {
            println!(
                "FAIL {} — {} (events {:?})",
                check.name, check.detail, check.offending
            );
        }
    }
    if outcome.failing_traces == 0 {
        println!("result: PASS");
    } else {
        println!(
            "result: FAIL ({} of {} interleavings violate invariants)",
            outcome.failing_traces, outcome.traces_checked
        );
    }
}
