//! Tick-by-tick execution of a scenario.
//!
//! One tick has four phases:
//!
//! 1. bots whose first online interval starts now attach and register,
//! 2. front-channel lines due this tick are delivered (queued if the target
//!    is offline, flushed when it returns),
//! 3. every online bot takes one poll step — split into a read micro-step
//!    followed by one micro-step per message, so schedules can interleave
//!    right where claim races happen,
//! 4. pending requests past their deadline expire.
//!
//! Phases 1, 2 and 4 are deterministic; only the order of phase-3 micro-steps
//! is scheduled (randomly or exhaustively). The world is a plain value and
//! clones cheaply, which is what the exhaustive enumerator forks.

use std::collections::VecDeque;

use crate::botcore::{BotState, UserIdentity};
use crate::channel::{Channel, ChannelMessage, Tick};
use crate::trace::{Event, EventTrace};

use super::scenario::{Scenario, ScenarioError};

#[derive(Debug, Clone)]
pub(crate) struct SimBot {
    pub state: BotState,
    pub attached: bool,
    /// Front-channel lines waiting for the bot to come online.
    pub queued: VecDeque<(UserIdentity, String)>,
}

/// Per-tick progress of one bot through its poll step.
#[derive(Debug, Clone)]
pub(crate) enum StepState {
    NeedRead,
    Processing(VecDeque<ChannelMessage>),
    Done,
}

#[derive(Debug, Clone)]
pub(crate) struct SimWorld {
    pub channel: Channel,
    pub bots: Vec<SimBot>,
    pub events: Vec<Event>,
}

impl SimWorld {
    pub fn init(sc: &Scenario) -> Result<SimWorld, ScenarioError> {
        let bots = sc
            .bots
            .iter()
            .map(|setup| {
                Ok(SimBot {
                    state: setup.instantiate()?,
                    attached: false,
                    queued: VecDeque::new(),
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(SimWorld {
            channel: Channel::new(sc.channel),
            bots,
            events: Vec::new(),
        })
    }

    /// Phases 1 and 2.
    pub fn begin_tick(&mut self, sc: &Scenario, t: Tick) {
        // Bots coming online for the first time attach and register.
        for (i, setup) in sc.bots.iter().enumerate() {
            if setup.online_at(t) && !self.bots[i].attached {
                self.bots[i].state.attach(&mut self.channel, t);
                self.bots[i].attached = true;
                let _ = self.bots[i]
                    .state
                    .register(&mut self.channel, t, &mut self.events);
            }
        }
        // Queued lines flush before new workload, oldest first.
        for (i, setup) in sc.bots.iter().enumerate() {
            if setup.online_at(t) {
                while let Some((user, text)) = self.bots[i].queued.pop_front() {
                    self.submit(i, &user, &text, t);
                }
            }
        }
        for item in sc.workload.iter().filter(|w| w.tick == t) {
            let i = sc
                .bots
                .iter()
                .position(|b| b.name == item.bot)
                .expect("validated");
            let user = sc.user_identity(&item.user);
            if sc.bots[i].online_at(t) {
                self.submit(i, &user, &item.text, t);
            } else {
                self.bots[i].queued.push_back((user, item.text.clone()));
            }
        }
    }

    fn submit(&mut self, i: usize, user: &UserIdentity, text: &str, t: Tick) {
        // Rejections (unauthorized, empty command) are not protocol events;
        // any help text still reaches the user through the outbox.
        let _ = self.bots[i]
            .state
            .submit_user_text(user, text, &mut self.channel, t, &mut self.events);
        self.drain_outbox(i, t);
    }

    /// Phase-3 start state for every bot.
    pub fn step_states(&self, sc: &Scenario, t: Tick) -> Vec<StepState> {
        sc.bots
            .iter()
            .enumerate()
            .map(|(i, setup)| {
                if setup.online_at(t) && self.bots[i].attached {
                    StepState::NeedRead
                } else {
                    StepState::Done
                }
            })
            .collect()
    }

    /// Advances bot `i` one micro-step. Returns true when the bot is done
    /// for this tick.
    ///
    /// Presence messages never change any state, so they are consumed at
    /// read time instead of occupying schedule slots; the set of observable
    /// interleavings is unchanged. Likewise, a processing step extends over
    /// consecutive messages until the first one that produces an event:
    /// silent skips (a bot's own forward, an unservable command, a foreign
    /// reply) commute with everything, and in this codebase every state
    /// change is accompanied by an event.
    pub fn step_bot(&mut self, states: &mut [StepState], i: usize, t: Tick) -> bool {
        match std::mem::replace(&mut states[i], StepState::Done) {
            StepState::NeedRead => {
                let batch = self.bots[i]
                    .state
                    .poll_read(&mut self.channel, t, &mut self.events);
                let queue: VecDeque<ChannelMessage> = batch
                    .into_iter()
                    .filter(|m| {
                        crate::wire::decode_envelope(&m.body)
                            .map(|env| env.kind != crate::wire::EnvelopeKind::Msg)
                            .unwrap_or(false)
                    })
                    .collect();
                if queue.is_empty() {
                    true
                } else {
                    states[i] = StepState::Processing(queue);
                    false
                }
            }
            StepState::Processing(mut queue) => {
                let before = self.events.len();
                while let Some(msg) = queue.pop_front() {
                    self.bots[i]
                        .state
                        .process_message(&msg, &mut self.channel, t, &mut self.events);
                    self.drain_outbox(i, t);
                    if self.events.len() > before {
                        break;
                    }
                }
                if queue.is_empty() {
                    true
                } else {
                    states[i] = StepState::Processing(queue);
                    false
                }
            }
            StepState::Done => true,
        }
    }

    /// True when bot `i`'s next micro-step cannot change any state right
    /// now: it would read an empty batch.
    pub fn next_step_is_noop(&self, states: &[StepState], i: usize) -> bool {
        match &states[i] {
            StepState::NeedRead => self.bots[i]
                .state
                .cursor()
                .map(|c| c.next_id as usize >= self.channel.len())
                .unwrap_or(true),
            StepState::Processing(_) => false,
            StepState::Done => true,
        }
    }

    /// Phase 4.
    pub fn end_tick(&mut self, sc: &Scenario, t: Tick) {
        for i in 0..self.bots.len() {
            if sc.bots[i].online_at(t) && self.bots[i].attached {
                self.bots[i]
                    .state
                    .expire_pending(&mut self.channel, t, &mut self.events);
                self.drain_outbox(i, t);
            }
        }
    }

    fn drain_outbox(&mut self, i: usize, t: Tick) {
        let name = self.bots[i].state.name().to_string();
        for (user, text) in self.bots[i].state.drain_outbox() {
            self.events.push(Event::deliver(t, &name, &user, &text));
        }
    }

    /// True when nothing can ever happen again: no future workload, nothing
    /// queued, no finite deadlines, every attached bot has read to the end,
    /// and no bot still has to come online for the first time.
    pub fn quiescent(&self, sc: &Scenario, t: Tick) -> bool {
        if sc.workload.iter().any(|w| w.tick > t) {
            return false;
        }
        for (i, setup) in sc.bots.iter().enumerate() {
            let bot = &self.bots[i];
            if !bot.queued.is_empty() {
                return false;
            }
            if bot.state.pending().iter().any(|p| p.deadline.is_some()) {
                return false;
            }
            match bot.state.cursor() {
                Some(cursor) => {
                    if (cursor.next_id as usize) < self.channel.len() {
                        return false;
                    }
                }
                None => {
                    // Never attached; a future online interval would still
                    // produce a registration.
                    if (t..=sc.horizon).any(|tt| setup.online_at(tt)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn finish(self) -> EventTrace {
        EventTrace {
            unclaimed: self.channel.live_command_ids(),
            events: self.events,
        }
    }
}
