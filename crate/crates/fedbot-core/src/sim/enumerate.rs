//! Brute-force schedule enumeration for small federations.
//!
//! Explores every interleaving of phase-3 micro-steps at every tick,
//! producing one trace per distinct observable schedule. This is the oracle
//! behind the at-most-once claim property: if any interleaving could
//! double-execute a command, the enumeration finds it.
//!
//! Steps that provably cannot affect anything are not branched on (see
//! [`super::driver::SimWorld::step_bot`]): presence messages, silent skips,
//! a tick where every remaining read would return nothing, and a fully
//! quiescent world, which fast-forwards to the end. None of these reductions
//! removes an ordering two observable actions could disagree on.

use crate::trace::EventTrace;

use super::driver::{SimWorld, StepState};
use super::scenario::{Mode, Scenario, ScenarioError};

/// Hard cap on explored micro-steps, so a mis-sized scenario fails loudly
/// instead of hanging.
const STEP_BUDGET: u64 = 50_000_000;

pub fn enumerate_small_schedules(sc: &Scenario) -> Result<Vec<EventTrace>, ScenarioError> {
    sc.validate()?;
    if sc.mode != Mode::Exhaustive {
        return Err(ScenarioError::Invalid(
            "enumeration requires mode = exhaustive".into(),
        ));
    }
    let world = SimWorld::init(sc)?;
    let mut traces = Vec::new();
    let mut budget = STEP_BUDGET;
    explore_tick(world, sc, 0, &mut traces, &mut budget)?;
    Ok(traces)
}

fn explore_tick(
    mut world: SimWorld,
    sc: &Scenario,
    t: u64,
    traces: &mut Vec<EventTrace>,
    budget: &mut u64,
) -> Result<(), ScenarioError> {
    if t > sc.horizon {
        traces.push(world.finish());
        return Ok(());
    }
    world.begin_tick(sc, t);
    let states = world.step_states(sc, t);
    explore_steps(world, states, sc, t, traces, budget)
}

fn explore_steps(
    world: SimWorld,
    states: Vec<StepState>,
    sc: &Scenario,
    t: u64,
    traces: &mut Vec<EventTrace>,
    budget: &mut u64,
) -> Result<(), ScenarioError> {
    let active: Vec<usize> = (0..states.len())
        .filter(|&i| !matches!(states[i], StepState::Done))
        .collect();

    if active.is_empty() {
        let mut world = world;
        world.end_tick(sc, t);
        if world.quiescent(sc, t) {
            traces.push(world.finish());
            return Ok(());
        }
        return explore_tick(world, sc, t + 1, traces, budget);
    }

    if *budget < active.len() as u64 {
        return Err(ScenarioError::Intractable(format!(
            "schedule space exceeds the {STEP_BUDGET}-step budget"
        )));
    }

    // When every remaining step is a no-op read, order cannot matter.
    if active.iter().all(|&i| world.next_step_is_noop(&states, i)) {
        let mut world = world;
        let mut states = states;
        for &i in &active {
            *budget -= 1;
            let done = world.step_bot(&mut states, i, t);
            debug_assert!(done);
        }
        return explore_steps(world, states, sc, t, traces, budget);
    }

    for &i in &active {
        let mut forked = world.clone();
        let mut forked_states = states.clone();
        *budget = budget.saturating_sub(1);
        forked.step_bot(&mut forked_states, i, t);
        explore_steps(forked, forked_states, sc, t, traces, budget)?;
    }
    Ok(())
}
