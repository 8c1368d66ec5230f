//! Protocol invariant checks over a finished trace.
//!
//! The checker reconstructs what the scenario promises (which commands run
//! locally, which are forwarded and to whom delivery is guaranteed, how many
//! bots answer a broadcast, when timeouts must fire) and compares that
//! against the observed events. Delivery guarantees assume the scenario's
//! horizon leaves room for them; a horizon too short to deliver a promised
//! reply fails the check, which is exactly what makes it a useful check.

use std::collections::{BTreeMap, BTreeSet};

use crate::botcore::{parse_command_line, ParsedLine};
use crate::channel::{MessageId, Tick};
use crate::trace::{EventKind, EventTrace};
use crate::wire::{decode_envelope, EnvelopeKind};

use super::scenario::{BotSetup, Scenario};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Indices into the trace's event list, for failures.
    pub offending: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct InvariantReport {
    pub checks: Vec<CheckResult>,
}

impl InvariantReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String, offending: Vec<usize>) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
            offending,
        });
    }
}

/// Headline numbers for a run.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct TraceSummary {
    pub posts: usize,
    pub executions: usize,
    pub deliveries: usize,
    pub timeouts: usize,
    pub claim_successes: usize,
    pub claim_failures: usize,
    pub unclaimed: usize,
}

pub fn summarize(trace: &EventTrace) -> TraceSummary {
    TraceSummary {
        posts: trace.count(EventKind::Post),
        executions: trace.count(EventKind::Execute),
        deliveries: trace.count(EventKind::DeliverToUser),
        timeouts: trace.count(EventKind::Timeout),
        claim_successes: trace.count(EventKind::ClaimSuccess),
        claim_failures: trace.count(EventKind::ClaimFail),
        unclaimed: trace.unclaimed.len(),
    }
}

/// What one workload line should produce, reconstructed from the scenario.
#[derive(Debug, Clone, PartialEq)]
enum Expectation {
    /// Exactly one reply to the user (local execution or guaranteed forward).
    OneReply,
    /// Broadcast answered by this many bots.
    Broadcast { answers: usize, window_end: Tick },
    /// Timeout message at exactly this tick.
    TimeoutAt(Tick),
    /// A capable bot exists but a finite deadline races it: either one reply
    /// or one timeout (at the given tick), never both.
    MaybeOne { timeout_at: Option<Tick> },
    /// No promise either way (nobody capable and no deadline, target never
    /// online, unauthorized user, ...).
    None,
}

pub fn check_invariants(trace: &EventTrace, sc: &Scenario) -> InvariantReport {
    let mut report = InvariantReport::default();

    // Posted message kinds, reconstructed from Post events.
    let mut posted_kind: BTreeMap<MessageId, EnvelopeKind> = BTreeMap::new();
    let mut posted_cmd: BTreeMap<MessageId, String> = BTreeMap::new();
    for ev in trace.of_kind(EventKind::Post) {
        if let (Some(id), Some(body)) = (ev.id, ev.body.as_deref()) {
            if let Ok(env) = decode_envelope(body) {
                posted_kind.insert(id, env.kind);
                posted_cmd.insert(id, env.cmd);
            }
        }
    }

    check_monotone_ticks(trace, &mut report);
    check_claim_structure(trace, &posted_kind, &mut report);
    check_at_most_once(trace, &posted_kind, &posted_cmd, &mut report);
    check_rep_consumption(trace, &posted_kind, &mut report);
    check_unclaimed_accounting(trace, &posted_kind, &mut report);
    check_deliveries_and_timeouts(trace, sc, &mut report);

    report
}

fn check_monotone_ticks(trace: &EventTrace, report: &mut InvariantReport) {
    let bad: Vec<usize> = trace
        .events
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].tick < w[0].tick)
        .map(|(i, _)| i + 1)
        .collect();
    report.push(
        "monotone-ticks",
        bad.is_empty(),
        "event ticks never decrease".into(),
        bad,
    );
}

/// Every ClaimSuccess follows exactly one Post of that id, and at most one
/// Execute follows a claim of a single-target command.
fn check_claim_structure(
    trace: &EventTrace,
    posted_kind: &BTreeMap<MessageId, EnvelopeKind>,
    report: &mut InvariantReport,
) {
    let mut offending = Vec::new();
    let mut claims_per_id: BTreeMap<MessageId, usize> = BTreeMap::new();
    for (idx, ev) in trace.events.iter().enumerate() {
        if ev.event == EventKind::ClaimSuccess {
            let id = ev.id.expect("claims carry ids");
            *claims_per_id.entry(id).or_default() += 1;
            if !posted_kind.contains_key(&id) {
                offending.push(idx);
            }
        }
    }
    let duplicate: Vec<MessageId> = claims_per_id
        .iter()
        .filter(|(_, &n)| n > 1)
        .map(|(&id, _)| id)
        .collect();
    for (idx, ev) in trace.events.iter().enumerate() {
        if ev.event == EventKind::ClaimSuccess && duplicate.contains(&ev.id.unwrap()) {
            offending.push(idx);
        }
    }
    report.push(
        "claim-once-per-id",
        offending.is_empty(),
        "at most one successful delete per message id, each on a posted id".into(),
        offending,
    );
}

fn check_at_most_once(
    trace: &EventTrace,
    posted_kind: &BTreeMap<MessageId, EnvelopeKind>,
    posted_cmd: &BTreeMap<MessageId, String>,
    report: &mut InvariantReport,
) {
    let single_cmds: BTreeSet<MessageId> = posted_kind
        .iter()
        .filter(|(id, kind)| {
            **kind == EnvelopeKind::Cmd
                && !posted_cmd
                    .get(id)
                    .map(|c| c.starts_with("all:"))
                    .unwrap_or(false)
        })
        .map(|(&id, _)| id)
        .collect();
    let mut executes: BTreeMap<MessageId, Vec<usize>> = BTreeMap::new();
    for (idx, ev) in trace.events.iter().enumerate() {
        if ev.event == EventKind::Execute {
            if let Some(id) = ev.id {
                if single_cmds.contains(&id) {
                    executes.entry(id).or_default().push(idx);
                }
            }
        }
    }
    let offending: Vec<usize> = executes
        .values()
        .filter(|v| v.len() > 1)
        .flatten()
        .copied()
        .collect();
    report.push(
        "at-most-once-execution",
        offending.is_empty(),
        "every single-target command executes at most once".into(),
        offending,
    );
}

/// Replies are consumed at most once, and only by a bot that forwarded a
/// command earlier (a bot that could hold the matching pending entry).
fn check_rep_consumption(
    trace: &EventTrace,
    posted_kind: &BTreeMap<MessageId, EnvelopeKind>,
    report: &mut InvariantReport,
) {
    let forwarders: BTreeSet<&str> = trace
        .of_kind(EventKind::Post)
        .filter(|ev| {
            ev.id
                .map(|id| posted_kind.get(&id) == Some(&EnvelopeKind::Cmd))
                .unwrap_or(false)
        })
        .map(|ev| ev.bot.as_str())
        .collect();
    let mut seen: BTreeSet<MessageId> = BTreeSet::new();
    let mut offending = Vec::new();
    for (idx, ev) in trace.events.iter().enumerate() {
        if ev.event != EventKind::ClaimSuccess {
            continue;
        }
        let id = ev.id.unwrap();
        if posted_kind.get(&id) != Some(&EnvelopeKind::Rep) {
            continue;
        }
        if !seen.insert(id) || !forwarders.contains(ev.bot.as_str()) {
            offending.push(idx);
        }
    }
    report.push(
        "rep-consumed-once",
        offending.is_empty(),
        "each reply is consumed at most once, by a requester".into(),
        offending,
    );
}

fn check_unclaimed_accounting(
    trace: &EventTrace,
    posted_kind: &BTreeMap<MessageId, EnvelopeKind>,
    report: &mut InvariantReport,
) {
    let claimed: BTreeSet<MessageId> = trace
        .of_kind(EventKind::ClaimSuccess)
        .filter_map(|e| e.id)
        .collect();
    let expected: BTreeSet<MessageId> = posted_kind
        .iter()
        .filter(|(id, kind)| **kind == EnvelopeKind::Cmd && !claimed.contains(id))
        .map(|(&id, _)| id)
        .collect();
    let actual: BTreeSet<MessageId> = trace.unclaimed.iter().copied().collect();
    report.push(
        "unclaimed-accounting",
        expected == actual,
        format!("unclaimed commands reported exactly (expected {expected:?}, got {actual:?})"),
        vec![],
    );
}

fn capable(setup: &BotSetup, cmd: &str, args: &str) -> bool {
    setup
        .instantiate()
        .map(|b| b.can_execute(cmd, args))
        .unwrap_or(false)
}

/// First tick in `from..=until` at which the bot is online.
fn online_at_or_after(setup: &BotSetup, from: Tick, until: Tick) -> Option<Tick> {
    (from..=until).find(|&t| setup.online_at(t))
}

/// Whether the bot has any online time at or after `from`, regardless of the
/// horizon. Delivery is promised on this basis, so a horizon too short for
/// the promise fails the check instead of silently excusing it.
fn eventually_online_from(setup: &BotSetup, from: Tick) -> bool {
    match &setup.online {
        None => true,
        Some(intervals) => intervals.iter().any(|iv| iv.to.is_none_or(|end| end > from)),
    }
}

/// Can this bot ever read a message posted at `post_tick`? On a memory
/// channel any later attach still sees it; without memory the bot must have
/// attached no later than the post.
fn can_see_post(setup: &BotSetup, post_tick: Tick, has_memory: bool) -> bool {
    has_memory || setup.first_online().is_some_and(|f| f <= post_tick)
}

/// Bots that will answer an `all:` broadcast posted at `post_tick`.
fn broadcast_answers(
    sc: &Scenario,
    name: &str,
    args: &str,
    post_tick: Tick,
    window_end: Tick,
) -> usize {
    sc.bots
        .iter()
        .filter(|b| capable(b, name, args))
        .filter(|b| online_at_or_after(b, post_tick, window_end).is_some())
        .filter(|b| can_see_post(b, post_tick, sc.channel.has_memory))
        .count()
}

fn classify(
    item_tick: Tick,
    user: &str,
    target: &BotSetup,
    text: &str,
    sc: &Scenario,
) -> Expectation {
    // Lines to an offline bot wait for it; the effective tick is its return.
    let Some(effective_tick) = online_at_or_after(target, item_tick, sc.horizon) else {
        return Expectation::None;
    };
    if !target.admins.iter().any(|a| a.as_str() == user) {
        return Expectation::None;
    }
    match parse_command_line(text) {
        // Help text and the bot directory are local, immediate replies.
        ParsedLine::Empty | ParsedLine::ListBots => Expectation::OneReply,
        ParsedLine::Command {
            forced_forward,
            cmd,
            args,
        } => {
            if let Some(name) = cmd.strip_prefix("all:") {
                let window_end = target
                    .reply_timeout
                    .map(|w| effective_tick + w)
                    .unwrap_or(sc.horizon)
                    .min(sc.horizon);
                let answers = broadcast_answers(sc, name, &args, effective_tick, window_end);
                if answers == 0 {
                    return match target.reply_timeout {
                        Some(w) if effective_tick + w <= sc.horizon => {
                            Expectation::TimeoutAt(effective_tick + w)
                        }
                        _ => Expectation::None,
                    };
                }
                return Expectation::Broadcast {
                    answers,
                    window_end,
                };
            }
            if !forced_forward && capable(target, &cmd, &args) {
                return Expectation::OneReply;
            }
            // Forwarded: someone else must claim it. The originator never
            // claims its own command.
            let claimer_exists = sc.bots.iter().any(|b| {
                b.name != target.name
                    && capable(b, &cmd, &args)
                    && eventually_online_from(b, effective_tick)
                    && can_see_post(b, effective_tick, sc.channel.has_memory)
            });
            if claimer_exists && target.reply_timeout.is_none() {
                Expectation::OneReply
            } else if !claimer_exists {
                match target.reply_timeout {
                    Some(w) if effective_tick + w <= sc.horizon => {
                        Expectation::TimeoutAt(effective_tick + w)
                    }
                    _ => Expectation::None,
                }
            } else {
                Expectation::MaybeOne {
                    timeout_at: target
                        .reply_timeout
                        .map(|w| effective_tick + w)
                        .filter(|&t| t <= sc.horizon),
                }
            }
        }
    }
}

fn check_deliveries_and_timeouts(trace: &EventTrace, sc: &Scenario, report: &mut InvariantReport) {
    let mut min_replies: BTreeMap<&str, usize> = BTreeMap::new();
    let mut max_replies: BTreeMap<&str, usize> = BTreeMap::new();
    let mut required_timeouts: BTreeMap<&str, Vec<Tick>> = BTreeMap::new();
    let mut optional_timeouts: BTreeMap<&str, Vec<Tick>> = BTreeMap::new();

    for item in &sc.workload {
        let target = sc.bot_setup(&item.bot).expect("validated");
        let user = item.user.as_str();
        match classify(item.tick, user, target, &item.text, sc) {
            Expectation::OneReply => {
                *min_replies.entry(user).or_default() += 1;
                *max_replies.entry(user).or_default() += 1;
            }
            Expectation::Broadcast { answers, .. } => {
                *min_replies.entry(user).or_default() += answers;
                *max_replies.entry(user).or_default() += answers;
            }
            Expectation::TimeoutAt(t) => {
                required_timeouts.entry(user).or_default().push(t);
            }
            Expectation::MaybeOne { timeout_at } => {
                *max_replies.entry(user).or_default() += 1;
                if let Some(t) = timeout_at {
                    optional_timeouts.entry(user).or_default().push(t);
                }
            }
            Expectation::None => {}
        }
    }

    let mut actual_replies: BTreeMap<&str, usize> = BTreeMap::new();
    let mut actual_timeouts: BTreeMap<&str, Vec<Tick>> = BTreeMap::new();
    for ev in trace.of_kind(EventKind::DeliverToUser) {
        let user = ev.user.as_deref().unwrap_or("");
        let text = ev.text.as_deref().unwrap_or("");
        if text.starts_with("TIMEOUT: ") {
            actual_timeouts.entry(user).or_default().push(ev.tick);
        } else {
            *actual_replies.entry(user).or_default() += 1;
        }
    }

    let users: BTreeSet<&str> = max_replies
        .keys()
        .chain(actual_replies.keys())
        .copied()
        .collect();
    let mut detail = Vec::new();
    let mut pass = true;
    for user in users {
        let lo = min_replies.get(user).copied().unwrap_or(0);
        let hi = max_replies.get(user).copied().unwrap_or(0);
        let got = actual_replies.get(user).copied().unwrap_or(0);
        if got < lo || got > hi {
            pass = false;
        }
        detail.push(format!("{user}: {got} replies, promised {lo}..={hi}"));
    }
    report.push(
        "delivery-guarantee",
        pass,
        format!(
            "guaranteed replies delivered exactly once ({})",
            if detail.is_empty() {
                "no deliveries promised".to_string()
            } else {
                detail.join(", ")
            }
        ),
        vec![],
    );

    // Required timeouts must appear at their exact tick; any leftover
    // timeout must be accounted for by a racing finite deadline.
    let timeout_users: BTreeSet<&str> = required_timeouts
        .keys()
        .chain(actual_timeouts.keys())
        .copied()
        .collect();
    let mut exact = true;
    let mut timeout_detail = Vec::new();
    for user in timeout_users {
        let mut got = actual_timeouts.get(user).cloned().unwrap_or_default();
        got.sort_unstable();
        let mut required = required_timeouts.get(user).cloned().unwrap_or_default();
        required.sort_unstable();
        let mut optional = optional_timeouts.get(user).cloned().unwrap_or_default();
        let mut leftover = got.clone();
        for t in &required {
            match leftover.iter().position(|x| x == t) {
                Some(i) => {
                    leftover.remove(i);
                }
                None => exact = false,
            }
        }
        for t in leftover {
            match optional.iter().position(|x| *x == t) {
                Some(i) => {
                    optional.remove(i);
                }
                None => exact = false,
            }
        }
        timeout_detail.push(format!("{user}: required {required:?}, got {got:?}"));
    }
    // Timeout events and delivered TIMEOUT lines must agree one-to-one.
    let delivered_timeouts: usize = actual_timeouts.values().map(Vec::len).sum();
    if trace.count(EventKind::Timeout) != delivered_timeouts {
        exact = false;
        timeout_detail.push("Timeout events and TIMEOUT deliveries disagree".into());
    }
    report.push(
        "timeout-exactness",
        exact,
        format!(
            "timeouts fire exactly when promised ({})",
            if timeout_detail.is_empty() {
                "none promised, none seen".to_string()
            } else {
                timeout_detail.join("; ")
            }
        ),
        vec![],
    );

    // With no finite deadline anywhere there must be no timeout at all.
    let any_finite = sc.bots.iter().any(|b| b.reply_timeout.is_some());
    if !any_finite {
        let offending: Vec<usize> = trace
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.event == EventKind::Timeout)
            .map(|(i, _)| i)
            .collect();
        report.push(
            "timeout-only-when-configured",
            offending.is_empty(),
            "no timeout events without a configured deadline".into(),
            offending,
        );
    }

    // Broadcast completeness per broadcast command id.
    for ev in trace.of_kind(EventKind::Post).collect::<Vec<_>>() {
        let Some(body) = ev.body.as_deref() else { continue };
        let Ok(env) = decode_envelope(body) else { continue };
        if env.kind != EnvelopeKind::Cmd {
            continue;
        }
        let Some(name) = env.cmd.strip_prefix("all:") else { continue };
        let Some(origin) = sc.bot_setup(&ev.bot) else { continue };
        let window_end = origin
            .reply_timeout
            .map(|w| ev.tick + w)
            .unwrap_or(sc.horizon)
            .min(sc.horizon);
        let answers = broadcast_answers(sc, name, &env.args, ev.tick, window_end);
        let id = ev.id.unwrap();
        let executed = trace
            .of_kind(EventKind::Execute)
            .filter(|e| e.id == Some(id))
            .count();
        report.push(
            "broadcast-completeness",
            executed == answers,
            format!("broadcast {id} answered by {executed}/{answers} capable live bots"),
            vec![],
        );
    }
}
