//! Delivery schedulers: the network adversaries a run can face.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::qsc::QscConfig;
use crate::rng::SplitMix64;
use crate::sim::net::Envelope;
use crate::types::{NodeId, Round, Step};

/// What a scheduler may look at besides the envelopes themselves.
pub struct NetView<'a> {
    pub now: u64,
    /// Current step of every node.
    pub steps: &'a [Step],
}

pub trait Scheduler {
    fn on_send(&mut self, _env: &Envelope) {}

    fn on_deliver(&mut self, _env: &Envelope) {}

    /// Choose one of `candidates`, which are listed in send order.
    fn pick(&mut self, candidates: &[&Envelope], view: &NetView<'_>) -> usize;

    /// The delay set the scheduler wants at time `now`.
    fn delay_set_at(&self, _now: u64) -> BTreeSet<NodeId> {
        BTreeSet::new()
    }

    /// The next time after `now` at which `delay_set_at` changes.
    fn next_change_after(&self, _now: u64) -> Option<u64> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelaySchedule {
    Fixed(Vec<NodeId>),
    /// Every `period` events the set moves on to the next `size` nodes.
    Rotating {
        period: u64,
        size: usize,
    },
    /// `(time, set)` pairs in increasing time order; the set is empty before
    /// the first entry.
    Explicit(Vec<(u64, Vec<NodeId>)>),
}

impl DelaySchedule {
    pub fn set_at(&self, n: usize, now: u64) -> BTreeSet<NodeId> {
        match self {
            DelaySchedule::Fixed(set) => set.iter().copied().collect(),
            DelaySchedule::Rotating { period, size } => {
                let k = now / period.max(&1);
                (0..*size)
                    .map(|j| NodeId(((k as usize * size + j) % n) as u32))
                    .collect()
            }
            DelaySchedule::Explicit(points) => points
                .iter()
                .take_while(|(t, _)| *t <= now)
                .last()
                .map(|(_, set)| set.iter().copied().collect())
                .unwrap_or_default(),
        }
    }

    pub fn next_change_after(&self, now: u64) -> Option<u64> {
        match self {
            DelaySchedule::Fixed(_) => None,
            DelaySchedule::Rotating { period, size } if *size > 0 => {
                let p = (*period).max(1);
                Some((now / p + 1) * p)
            }
            DelaySchedule::Rotating { .. } => None,
            DelaySchedule::Explicit(points) => points.iter().map(|(t, _)| *t).find(|&t| t > now),
        }
    }

    pub fn max_size(&self) -> usize {
        match self {
            DelaySchedule::Fixed(set) => set.len(),
            DelaySchedule::Rotating { size, .. } => *size,
            DelaySchedule::Explicit(points) => {
                points.iter().map(|(_, s)| s.len()).max().unwrap_or(0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AdversaryKind {
    /// Uniformly random delivery order, blind to message contents.
    Oblivious,
    /// Random order, while holding back everything sent by a delay set.
    DelaySet { schedule: DelaySchedule },
    /// Reads plaintext tickets and schedules to keep the best proposal from
    /// being confirmed while still letting everyone see it.
    TicketAware,
}

impl AdversaryKind {
    pub fn label(&self) -> &'static str {
        match self {
            AdversaryKind::Oblivious => "oblivious",
            AdversaryKind::DelaySet { .. } => "delay_set",
            AdversaryKind::TicketAware => "ticket_aware",
        }
    }

    pub fn build(&self, n: usize, seed: u64, qsc: &QscConfig) -> Box<dyn Scheduler + Send> {
        let rng = SplitMix64::stream(seed, 0);
        match self {
            AdversaryKind::Oblivious => Box::new(Oblivious { rng }),
            AdversaryKind::DelaySet { schedule } => Box::new(DelaySetScheduler {
                rng,
                n,
                schedule: schedule.clone(),
            }),
            AdversaryKind::TicketAware => Box::new(TicketAware::new(n, qsc.clone())),
        }
    }
}

pub struct Oblivious {
    rng: SplitMix64,
}

impl Scheduler for Oblivious {
    fn pick(&mut self, candidates: &[&Envelope], _: &NetView<'_>) -> usize {
        self.rng.below(candidates.len() as u64) as usize
    }
}

pub struct DelaySetScheduler {
    rng: SplitMix64,
    n: usize,
    schedule: DelaySchedule,
}

impl Scheduler for DelaySetScheduler {
    fn pick(&mut self, candidates: &[&Envelope], _: &NetView<'_>) -> usize {
        self.rng.below(candidates.len() as u64) as usize
    }

    fn delay_set_at(&self, now: u64) -> BTreeSet<NodeId> {
        self.schedule.set_at(self.n, now)
    }

    fn next_change_after(&self, now: u64) -> Option<u64> {
        self.schedule.next_change_after(now)
    }
}

#[derive(Default)]
struct RoundIntel {
    // proposer -> (seq of its proposal record, plaintext ticket if visible)
    proposals: BTreeMap<NodeId, (u32, Option<u64>)>,
    // proposer -> nodes its proposal record has reached
    arrived: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

/// Deterministic adversary that exploits plaintext tickets.
///
/// Proposals of a round are held until every node has reached the round's
/// first step, so the adversary knows all tickets. The best one's proposer is
/// then cut off from nodes still at that step (no acks, so it is never
/// certified), and its proposal is rushed to everyone else once they move on,
/// where it spoils every commit. With sealed tickets there is nothing to
/// exploit and the adversary just delivers in send order.
pub struct TicketAware {
    n: usize,
    qsc: QscConfig,
    rounds: BTreeMap<Round, RoundIntel>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Priority,
    Normal,
    Deferred,
}

impl TicketAware {
    pub fn new(n: usize, qsc: QscConfig) -> Self {
        TicketAware {
            n,
            qsc,
            rounds: BTreeMap::new(),
        }
    }

    fn champion(&self, intel: &RoundIntel) -> Option<(NodeId, u32)> {
        if intel.proposals.values().any(|(_, t)| t.is_none()) {
            return None;
        }
        intel
            .proposals
            .iter()
            .max_by_key(|(p, (_, t))| (t.expect("visible"), std::cmp::Reverse(**p)))
            .map(|(p, (seq, _))| (*p, *seq))
    }

    fn classify(&self, env: &Envelope, steps: &[Step]) -> Class {
        let mut class = Class::Normal;
        let to_step = steps[env.recipient.index()];
        for (&round, intel) in &self.rounds {
            let start = self.qsc.round_start(round);
            let collected = steps.iter().all(|&s| s >= start);
            if let Some(p) = env.payload.msg.proposal() {
                if p.round == round && !collected {
                    return Class::Deferred;
                }
            }
            if !collected {
                continue;
            }
            let Some((champ, seq)) = self.champion(intel) else {
                continue;
            };
            if env.sender != champ || env.payload.seq < seq {
                continue;
            }
            if to_step <= start {
                return Class::Deferred;
            }
            let reached = intel
                .arrived
                .get(&champ)
                .is_some_and(|s| s.contains(&env.recipient));
            if !reached {
                class = Class::Priority;
            }
        }
        class
    }
}

impl Scheduler for TicketAware {
    fn on_send(&mut self, env: &Envelope) {
        if let Some(p) = env.payload.msg.proposal() {
            let visible = (!p.ticket.sealed).then_some(p.ticket.value);
            self.rounds
                .entry(p.round)
                .or_default()
                .proposals
                .insert(p.proposer, (env.payload.seq, visible));
        }
    }

    fn on_deliver(&mut self, env: &Envelope) {
        if let Some(p) = env.payload.msg.proposal() {
            if let Some(intel) = self.rounds.get_mut(&p.round) {
                intel
                    .arrived
                    .entry(p.proposer)
                    .or_default()
                    .insert(env.recipient);
            }
        }
    }

    fn pick(&mut self, candidates: &[&Envelope], view: &NetView<'_>) -> usize {
        let slowest = view.steps.iter().copied().min().unwrap_or(0);
        let qsc = &self.qsc;
        self.rounds.retain(|&r, _| qsc.round_end(r) > slowest);
        debug_assert_eq!(view.steps.len(), self.n);
        candidates
            .iter()
            .enumerate()
            .min_by_key(|(i, e)| (self.classify(e, view.steps), *i))
            .map_or(0, |(i, _)| i)
    }
}
