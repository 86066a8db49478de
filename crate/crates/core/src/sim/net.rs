//! Asynchronous point-to-point network with a bounded delay set.
//!
//! Time is counted in scheduling events. Every envelope from a node outside
//! the delay set gets a finite deadline and is force-delivered when the
//! deadline arrives, so the scheduler can reorder freely but never starve
//! a live sender. Envelopes from delay-set members have no deadline until
//! their sender leaves the set.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::causality::LogRecord;
use crate::error::ConfigError;
use crate::sim::adversary::{NetView, Scheduler};
use crate::types::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Deadline {
    At(u64),
    Indefinite,
}

impl Deadline {
    pub fn finite(self) -> Option<u64> {
        match self {
            Deadline::At(t) => Some(t),
            Deadline::Indefinite => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub id: u64,
    pub sender: NodeId,
    pub recipient: NodeId,
    pub payload: Arc<LogRecord>,
    /// Network time at which the envelope was sent.
    pub sent_at: u64,
    pub deadline: Deadline,
}

#[derive(Clone, Debug)]
pub struct Network {
    n: usize,
    f_d: usize,
    horizon: u64,
    now: u64,
    next_id: u64,
    last_deadline: u64,
    pending: BTreeMap<u64, Envelope>,
    delay_set: BTreeSet<NodeId>,
}

impl Network {
    /// `horizon` is how many events a live sender's envelope may be held.
    pub fn new(n: usize, f_d: usize, horizon: u64) -> Result<Self, ConfigError> {
        if f_d >= n {
            return Err(ConfigError::DelayBudget { f_d, n });
        }
        if horizon == 0 {
            return Err(ConfigError::Invalid(
                "deadline horizon must be positive".into(),
            ));
        }
        Ok(Network {
            n,
            f_d,
            horizon,
            now: 0,
            next_id: 0,
            last_deadline: 0,
            pending: BTreeMap::new(),
            delay_set: BTreeSet::new(),
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn delay_set(&self) -> &BTreeSet<NodeId> {
        &self.delay_set
    }

    pub fn pending(&self) -> impl Iterator<Item = &Envelope> {
        self.pending.values()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    // Deadlines are kept distinct so at most one envelope falls due per event.
    fn next_deadline(&mut self) -> Deadline {
        let d = (self.now + self.horizon).max(self.last_deadline + 1);
        self.last_deadline = d;
        Deadline::At(d)
    }

    /// Queue `payload` from `sender` to every other node.
    pub fn broadcast(
        &mut self,
        sender: NodeId,
        payload: &Arc<LogRecord>,
        scheduler: &mut dyn Scheduler,
    ) -> Vec<u64> {
        let mut ids = Vec::with_capacity(self.n - 1);
        for recipient in NodeId::all(self.n).filter(|&r| r != sender) {
            let deadline = if self.delay_set.contains(&sender) {
                Deadline::Indefinite
            } else {
                self.next_deadline()
            };
            let env = Envelope {
                id: self.next_id,
                sender,
                recipient,
                payload: payload.clone(),
                sent_at: self.now,
                deadline,
            };
            self.next_id += 1;
            scheduler.on_send(&env);
            ids.push(env.id);
            self.pending.insert(env.id, env);
        }
        ids
    }

    /// Replace the delay set. Envelopes from nodes that leave it get finite
    /// deadlines, in send order.
    pub fn set_delay_set(&mut self, set: BTreeSet<NodeId>) -> Result<(), ConfigError> {
        if set.len() > self.f_d {
            return Err(ConfigError::DelaySetTooLarge {
                size: set.len(),
                f_d: self.f_d,
            });
        }
        if let Some(&node) = set.iter().find(|x| x.index() >= self.n) {
            return Err(ConfigError::UnknownNode { node, n: self.n });
        }
        let leaving: Vec<u64> = self
            .pending
            .values()
            .filter(|e| e.deadline == Deadline::Indefinite && !set.contains(&e.sender))
            .map(|e| e.id)
            .collect();
        for id in leaving {
            let d = self.next_deadline();
            self.pending.get_mut(&id).expect("pending").deadline = d;
        }
        self.delay_set = set;
        Ok(())
    }

    /// Move an envelope's deadline earlier. Later deadlines are refused.
    pub fn advance_deadline(&mut self, id: u64, to: u64) -> bool {
        match self.pending.get_mut(&id) {
            Some(env) if env.deadline.finite().is_some_and(|d| to < d) && to >= self.now => {
                env.deadline = Deadline::At(to);
                true
            }
            _ => false,
        }
    }

    /// Jump the clock forward, e.g. to the next scheduled delay-set change.
    pub fn skip_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    /// Take the next envelope to deliver and tick the clock, or `None` when
    /// only delay-set traffic (or nothing) is pending.
    pub fn next_delivery(
        &mut self,
        scheduler: &mut dyn Scheduler,
        view: &NetView<'_>,
    ) -> Option<Envelope> {
        let due = self
            .pending
            .values()
            .filter_map(|e| e.deadline.finite().map(|d| (d, e.id)))
            .filter(|&(d, _)| d <= self.now)
            .min()
            .map(|(_, id)| id);
        let id = match due {
            Some(id) => id,
            None => {
                let candidates: Vec<&Envelope> = self
                    .pending
                    .values()
                    .filter(|e| !self.delay_set.contains(&e.sender))
                    .collect();
                if candidates.is_empty() {
                    return None;
                }
                let i = scheduler.pick(&candidates, view);
                candidates[i.min(candidates.len() - 1)].id
            }
        };
        let env = self.pending.remove(&id).expect("pending");
        self.now += 1;
        scheduler.on_deliver(&env);
        Some(env)
    }
}
