//! Que Sera Consensus layered on the threshold clock.
//!
//! Each round spans three steps starting at `s`. Every node proposes at `s`
//! with a random ticket. At `s + 3` a node resolves the round to the best
//! (highest-ticket) proposal it saw certified at `s`, and commits it when that
//! proposal was also re-confirmed at `s + 1` and no other proposal it knows of
//! could tie or beat it.

mod chain;

pub use chain::{Block, BlockStore, ChainState, Digest, Finalized};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::causality::VectorClock;
use crate::error::{ConfigError, ProtocolError};
use crate::message::Payload;
use crate::rng::SplitMix64;
use crate::tlc::{StepEntry, StepHook};
use crate::types::{NodeId, RecordId, Round, Step};

/// Lottery ticket attached to a proposal. `sealed` tickets are hidden from
/// the network until the round is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ticket {
    pub value: u64,
    pub sealed: bool,
}

impl Ticket {
    /// Commitment published with a sealed proposal: a SHA-256 prefix over
    /// the round, proposer and ticket value.
    pub fn commitment(&self, round: Round, proposer: NodeId) -> String {
        let mut h = Sha256::new();
        h.update(round.to_be_bytes());
        h.update(proposer.0.to_be_bytes());
        h.update(self.value.to_be_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// A transaction spending `coin`; the first block in a chain to include a
/// coin spends it and later spends of the same coin are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tx {
    pub id: u64,
    pub coin: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Proposal {
    pub round: Round,
    pub proposer: NodeId,
    pub ticket: Ticket,
    pub txs: Vec<Tx>,
}

/// A node's published decision for a round: the proposal it chose as best.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub round: Round,
    pub choice: RecordId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitRule {
    /// Commit when the best confirmed proposal is re-confirmed and unspoiled.
    #[default]
    Qsc3,
    /// Commit whenever anything was confirmed. Unsafe; kept so the checkers
    /// have something to catch.
    ConfirmOnly,
}

/// Which round-`s` proposals count as potential spoilers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoilerHorizon {
    /// Every proposal known when the round is resolved at `s + 3`.
    #[default]
    Inclusive,
    /// Only proposals already known on entering `s + 2`.
    Strict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketSource {
    /// Draw tickets from each node's random stream.
    #[default]
    Random,
    /// Node `i` always uses ticket `values[i]`.
    Fixed(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QscConfig {
    pub rounds: Round,
    /// Start a round at every step instead of every third step.
    pub pipeline: bool,
    pub encrypt_tickets: bool,
    pub commit_rule: CommitRule,
    pub horizon: SpoilerHorizon,
    pub tickets: TicketSource,
    pub txs_per_proposal: usize,
}

impl Default for QscConfig {
    fn default() -> Self {
        QscConfig {
            rounds: 0,
            pipeline: false,
            encrypt_tickets: true,
            commit_rule: CommitRule::Qsc3,
            horizon: SpoilerHorizon::Inclusive,
            tickets: TicketSource::Random,
            txs_per_proposal: 2,
        }
    }
}

impl QscConfig {
    pub fn validate(&self, n: usize) -> Result<(), ConfigError> {
        if let TicketSource::Fixed(v) = &self.tickets {
            if v.len() != n {
                return Err(ConfigError::TicketCount { got: v.len(), n });
            }
        }
        Ok(())
    }

    pub fn round_start(&self, r: Round) -> Step {
        if self.pipeline {
            r
        } else {
            3 * r
        }
    }

    pub fn round_end(&self, r: Round) -> Step {
        self.round_start(r) + 3
    }

    /// The round proposed at `step`, if any.
    pub fn round_starting_at(&self, step: Step) -> Option<Round> {
        let r = if self.pipeline {
            step
        } else if step.is_multiple_of(3) {
            step / 3
        } else {
            return None;
        };
        (r < self.rounds).then_some(r)
    }

    /// The round resolved at `step`, if any.
    pub fn round_ending_at(&self, step: Step) -> Option<Round> {
        let start = step.checked_sub(3)?;
        self.round_starting_at(start)
    }

    /// The step at which the last round resolves, which is as far as a
    /// node needs to go.
    pub fn max_step(&self) -> Step {
        if self.rounds == 0 {
            0
        } else {
            self.round_end(self.rounds - 1)
        }
    }
}

/// A node's view of one round at the moment it resolved it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RoundView {
    pub round: Round,
    pub confirmed: Vec<RecordId>,
    pub reconfirmed: Vec<RecordId>,
    /// Every round proposal inside the spoiler horizon.
    pub seen: Vec<RecordId>,
    pub best: RecordId,
    pub committed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QscEvent {
    /// The step whose entry triggered the resolution.
    pub at_step: Step,
    pub view: RoundView,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QscNode {
    id: NodeId,
    cfg: Arc<QscConfig>,
    rng: SplitMix64,
    proposed: BTreeSet<Round>,
    views: BTreeMap<Round, RoundView>,
    // Delivered clock on entry to each step, kept only for the strict horizon.
    horizons: Vec<(Step, VectorClock)>,
    events: Vec<QscEvent>,
}

impl QscNode {
    pub fn new(id: NodeId, cfg: Arc<QscConfig>, rng: SplitMix64) -> Self {
        QscNode {
            id,
            cfg,
            rng,
            proposed: BTreeSet::new(),
            views: BTreeMap::new(),
            horizons: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &QscConfig {
        &self.cfg
    }

    pub fn view(&self, round: Round) -> Option<&RoundView> {
        self.views.get(&round)
    }

    pub fn views(&self) -> impl Iterator<Item = &RoundView> {
        self.views.values()
    }

    pub fn take_events(&mut self) -> Vec<QscEvent> {
        std::mem::take(&mut self.events)
    }

    fn draw_ticket(&mut self) -> u64 {
        match &self.cfg.tickets {
            TicketSource::Random => self.rng.next_u64(),
            TicketSource::Fixed(v) => v[self.id.index()],
        }
    }

    fn propose(&mut self, round: Round) -> Proposal {
        let value = self.draw_ticket();
        let coins = 8 + 2 * round;
        let txs = (0..self.cfg.txs_per_proposal)
            .map(|_| Tx {
                id: self.rng.next_u64(),
                coin: self.rng.below(coins),
            })
            .collect();
        Proposal {
            round,
            proposer: self.id,
            ticket: Ticket {
                value,
                sealed: self.cfg.encrypt_tickets,
            },
            txs,
        }
    }

    fn horizon(&self, step: Step) -> Option<&VectorClock> {
        self.horizons
            .iter()
            .find(|(s, _)| *s >= step)
            .map(|(_, vt)| vt)
    }

    fn resolve(&self, round: Round, entry: &StepEntry<'_>) -> Result<RoundView, ProtocolError> {
        let s = self.cfg.round_start(round);
        let tlc = entry.node;
        let proposal = |id: RecordId| {
            entry
                .store
                .get(id)
                .and_then(|rec| rec.msg.proposal())
                .filter(|p| p.round == round)
        };
        let confirmed: Vec<RecordId> = tlc
            .certs_at(s)
            .iter()
            .copied()
            .filter(|&id| proposal(id).is_some())
            .collect();
        let ticket = |id: RecordId| {
            let p = proposal(id).expect("filtered");
            (p.ticket.value, p.proposer)
        };
        let witnesses: Vec<&[RecordId]> = tlc
            .certs_at(s + 1)
            .iter()
            .filter_map(|&m| entry.store.get(m))
            .filter_map(|rec| rec.msg.as_raw())
            .map(|raw| raw.advanced_on.as_slice())
            .collect();
        let reconfirmed: Vec<RecordId> = confirmed
            .iter()
            .copied()
            .filter(|p| witnesses.iter().any(|w| w.contains(p)))
            .collect();
        let horizon = match self.cfg.horizon {
            SpoilerHorizon::Inclusive => None,
            SpoilerHorizon::Strict => self.horizon(s + 2),
        };
        let seen: Vec<RecordId> = tlc
            .raws_at(s)
            .iter()
            .copied()
            .filter(|&id| proposal(id).is_some())
            .filter(|&id| horizon.is_none_or(|vt| vt.covers(id)))
            .collect();
        let lots = |ids: &[RecordId]| ids.iter().map(|&id| ticket(id)).collect::<Vec<_>>();
        let (winner, committed) = decide(
            self.cfg.commit_rule,
            &lots(&confirmed),
            &lots(&reconfirmed),
            &lots(&seen),
        )
        .ok_or(ProtocolError::EmptyConfirmed {
            node: self.id,
            round,
        })?;
        let best = confirmed
            .iter()
            .copied()
            .find(|&id| ticket(id) == winner)
            .expect("winner is confirmed");
        Ok(RoundView {
            round,
            confirmed,
            reconfirmed,
            seen,
            best,
            committed,
        })
    }
}

/// Resolve a round from what a node knows. Each proposal is given as its
/// (ticket, proposer) pair; `reconfirmed` is a subset of `confirmed`.
/// Returns the best confirmed proposal and whether it is committed, or
/// `None` when nothing was confirmed.
pub fn decide(
    rule: CommitRule,
    confirmed: &[(u64, NodeId)],
    reconfirmed: &[(u64, NodeId)],
    seen: &[(u64, NodeId)],
) -> Option<((u64, NodeId), bool)> {
    let best = confirmed
        .iter()
        .copied()
        .max_by_key(|&(value, proposer)| (value, Reverse(proposer)))?;
    let committed = match rule {
        CommitRule::ConfirmOnly => true,
        CommitRule::Qsc3 => {
            reconfirmed.contains(&best) && !seen.iter().any(|&q| q != best && q.0 >= best.0)
        }
    };
    Some((best, committed))
}

impl StepHook for QscNode {
    fn enter_step(&mut self, entry: StepEntry<'_>) -> Result<Payload, ProtocolError> {
        let to = entry.to;
        if self.cfg.horizon == SpoilerHorizon::Strict {
            self.horizons.push((to, entry.delivered.clone()));
        }
        let first = entry.from.map_or(0, |f| f + 1);
        let mut resolutions = Vec::new();
        for step in first..=to {
            let Some(round) = self.cfg.round_ending_at(step) else {
                continue;
            };
            if self.views.contains_key(&round) {
                continue;
            }
            let view = self.resolve(round, &entry)?;
            resolutions.push(Resolution {
                round,
                choice: view.best,
            });
            self.events.push(QscEvent {
                at_step: to,
                view: view.clone(),
            });
            self.views.insert(round, view);
        }
        if self.cfg.horizon == SpoilerHorizon::Strict {
            let next_open = self.views.keys().next_back().map_or(0, |r| r + 1);
            let keep_from = self.cfg.round_start(next_open) + 2;
            self.horizons.retain(|(s, _)| *s >= keep_from);
        }
        let proposal = match self.cfg.round_starting_at(to) {
            Some(round) if self.proposed.insert(round) => Some(self.propose(round)),
            _ => None,
        };
        Ok(Payload {
            proposal,
            resolutions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_layout() {
        let seq = QscConfig {
            rounds: 4,
            ..QscConfig::default()
        };
        assert_eq!(seq.round_start(2), 6);
        assert_eq!(seq.round_starting_at(6), Some(2));
        assert_eq!(seq.round_starting_at(7), None);
        assert_eq!(seq.round_ending_at(9), Some(2));
        assert_eq!(seq.max_step(), 12);
        let pipe = QscConfig {
            rounds: 4,
            pipeline: true,
            ..QscConfig::default()
        };
        assert_eq!(pipe.round_starting_at(3), Some(3));
        assert_eq!(pipe.round_ending_at(5), Some(2));
        assert_eq!(pipe.max_step(), 6);
    }

    #[test]
    fn commitment_hides_value_but_is_stable() {
        let t = Ticket {
            value: 99,
            sealed: true,
        };
        assert_eq!(t.commitment(1, NodeId(2)), t.commitment(1, NodeId(2)));
        assert_ne!(t.commitment(1, NodeId(2)), t.commitment(1, NodeId(3)));
        assert_eq!(t.commitment(0, NodeId(0)).len(), 16);
    }
}
