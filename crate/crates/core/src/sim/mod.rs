//! Deterministic discrete-event simulation of a run.

pub mod adversary;
pub mod net;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{CausalError, Holdback, LogRecord, RecordStore};
use crate::error::{ConfigError, ProtocolError};
use crate::message::Message;
use crate::node::{Node, NodeEvent};
use crate::qsc::{BlockStore, ChainState, Finalized, QscConfig, RoundView};
use crate::rng::SplitMix64;
use crate::tlc::TlcConfig;
use crate::trace::{
    BlockInfo, EndStatus, EventBody, PendingInfo, ProposalInfo, ResolutionInfo, Trace, TraceHeader,
};
use crate::types::{NodeId, Round, Step};

pub use adversary::{AdversaryKind, DelaySchedule, NetView, Scheduler};
pub use net::{Deadline, Envelope, Network};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Largest delay set the network may hold back.
    pub f_d: usize,
    pub seed: u64,
    pub adversary: AdversaryKind,
    /// Deliveries after which the run is cut off and marked truncated.
    pub max_events: u64,
    /// Events a live sender's envelope may wait before forced delivery.
    pub deadline_horizon: u64,
}

impl SimConfig {
    pub fn new(n: usize, f_d: usize, seed: u64) -> Self {
        SimConfig {
            n,
            f_d,
            seed,
            adversary: AdversaryKind::Oblivious,
            max_events: 50_000_000,
            deadline_horizon: 4096,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub tlc: TlcConfig,
    pub qsc: QscConfig,
}

impl RunConfig {
    /// `n` nodes running `rounds` consensus rounds with `t_m = t_w = t`.
    pub fn consensus(
        n: usize,
        t: usize,
        f_d: usize,
        rounds: Round,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let qsc = QscConfig {
            rounds,
            ..QscConfig::default()
        };
        let tlc = TlcConfig::new(n, t, t)?.with_max_step(qsc.max_step());
        let cfg = RunConfig {
            sim: SimConfig::new(n, f_d, seed),
            tlc,
            qsc,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Clock-only run to `max_step` with no consensus on top.
    pub fn clock_only(
        n: usize,
        t_m: usize,
        t_w: usize,
        f_d: usize,
        max_step: Step,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let cfg = RunConfig {
            sim: SimConfig::new(n, f_d, seed),
            tlc: TlcConfig::new(n, t_m, t_w)?.with_max_step(max_step),
            qsc: QscConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switch between sequential and pipelined rounds, keeping the step
    /// budget in line with the round count.
    pub fn with_pipeline(mut self, pipeline: bool) -> Self {
        self.qsc.pipeline = pipeline;
        self.tlc.max_step = self.qsc.max_step();
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tlc.validate()?;
        if self.tlc.n != self.sim.n {
            return Err(ConfigError::Invalid(format!(
                "clock has n={} but network has n={}",
                self.tlc.n, self.sim.n
            )));
        }
        if self.sim.f_d >= self.sim.n {
            return Err(ConfigError::DelayBudget {
                f_d: self.sim.f_d,
                n: self.sim.n,
            });
        }
        if let AdversaryKind::DelaySet { schedule } = &self.sim.adversary {
            if schedule.max_size() > self.sim.f_d {
                return Err(ConfigError::DelaySetTooLarge {
                    size: schedule.max_size(),
                    f_d: self.sim.f_d,
                });
            }
        }
        if self.qsc.rounds > 0 && !self.tlc.witnessed() {
            return Err(ConfigError::Invalid(
                "consensus needs witnessed messages (t_w > 0)".into(),
            ));
        }
        self.qsc.validate(self.sim.n)
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            n: self.sim.n,
            t_m: self.tlc.t_m,
            t_w: self.tlc.t_w,
            self_ack: self.tlc.self_ack,
            f_d: self.sim.f_d,
            max_step: self.tlc.max_step,
            rounds: self.qsc.rounds,
            pipeline: self.qsc.pipeline,
            encrypt_tickets: self.qsc.encrypt_tickets,
            strict_horizon: self.qsc.horizon == crate::qsc::SpoilerHorizon::Strict,
            seed: self.sim.seed,
            adversary: self.sim.adversary.label().to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("protocol invariant broken: {0}")]
    Protocol(#[from] ProtocolError),
}

impl From<CausalError> for SimError {
    fn from(e: CausalError) -> Self {
        SimError::Protocol(e.into())
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub trace: Trace,
    pub status: EndStatus,
    pub deliveries: u64,
    /// Final step of every node.
    pub steps: Vec<Step>,
    /// Every node's round views, indexed by node.
    pub views: Vec<Vec<RoundView>>,
}

/// Run one simulation to quiescence (or the event budget).
pub fn run(cfg: &RunConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    Simulation::new(cfg)?.run()
}

struct Simulation<'a> {
    cfg: &'a RunConfig,
    nodes: Vec<Node>,
    holdbacks: Vec<Holdback>,
    store: RecordStore,
    net: Network,
    sched: Box<dyn Scheduler + Send>,
    trace: Trace,
    blocks: BlockStore,
    chains: Vec<ChainState>,
    tickets: BTreeMap<Round, Vec<(NodeId, u64)>>,
    revealed: BTreeSet<Round>,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, SimError> {
        let n = cfg.sim.n;
        let qsc = Arc::new(cfg.qsc.clone());
        let nodes = NodeId::all(n)
            .map(|id| {
                let rng = SplitMix64::stream(cfg.sim.seed, 1 + id.0 as u64);
                Node::new(id, cfg.tlc, qsc.clone(), rng)
            })
            .collect();
        Ok(Simulation {
            cfg,
            nodes,
            holdbacks: vec![Holdback::new(); n],
            store: RecordStore::new(n),
            net: Network::new(n, cfg.sim.f_d, cfg.sim.deadline_horizon)?,
            sched: cfg.sim.adversary.build(n, cfg.sim.seed, &cfg.qsc),
            trace: Trace::new(),
            blocks: BlockStore::new(),
            chains: vec![ChainState::new(); n],
            tickets: BTreeMap::new(),
            revealed: BTreeSet::new(),
        })
    }

    fn run(mut self) -> Result<SimOutcome, SimError> {
        self.trace.push(EventBody::Header(self.cfg.header()));
        self.sync_delay_set()?;
        for i in 0..self.nodes.len() {
            self.trace.push(EventBody::Start {
                node: NodeId(i as u32),
            });
            let events = self.nodes[i].start(&mut self.store)?;
            self.handle(i, events)?;
        }
        let mut deliveries = 0u64;
        let status = loop {
            self.sync_delay_set()?;
            if deliveries >= self.cfg.sim.max_events {
                break EndStatus::Truncated;
            }
            let steps: Vec<Step> = self.nodes.iter().map(Node::step).collect();
            let view = NetView {
                now: self.net.now(),
                steps: &steps,
            };
            match self.net.next_delivery(self.sched.as_mut(), &view) {
                Some(env) => {
                    deliveries += 1;
                    let r = env.recipient.index();
                    let released =
                        self.holdbacks[r].receive(env.payload, self.nodes[r].delivered())?;
                    for rec in released {
                        let events = self.nodes[r].deliver(rec, &mut self.store)?;
                        self.handle(r, events)?;
                    }
                }
                None => {
                    if self.net.pending_len() > 0 {
                        if let Some(t) = self.sched.next_change_after(self.net.now()) {
                            self.net.skip_to(t);
                            continue;
                        }
                    }
                    break EndStatus::Quiescent;
                }
            }
        };
        let pending = self
            .net
            .pending()
            .map(|e| PendingInfo {
                from: e.sender,
                to: e.recipient,
                seq: e.payload.seq,
                deadline: e.deadline.finite(),
            })
            .collect();
        self.trace.push(EventBody::End {
            status,
            deliveries,
            delay_set: self.net.delay_set().iter().copied().collect(),
            pending,
        });
        Ok(SimOutcome {
            trace: self.trace,
            status,
            deliveries,
            steps: self.nodes.iter().map(Node::step).collect(),
            views: self
                .nodes
                .iter()
                .map(|n| n.qsc().views().cloned().collect())
                .collect(),
        })
    }

    fn sync_delay_set(&mut self) -> Result<(), SimError> {
        let wanted = self.sched.delay_set_at(self.net.now());
        if wanted != *self.net.delay_set() {
            self.net.set_delay_set(wanted.clone())?;
            self.trace.push(EventBody::DelaySet {
                set: wanted.into_iter().collect(),
            });
        }
        Ok(())
    }

    fn handle(&mut self, i: usize, events: Vec<NodeEvent>) -> Result<(), SimError> {
        let node = NodeId(i as u32);
        for ev in events {
            match ev {
                NodeEvent::Delivered(rec) => self.trace.push(EventBody::Deliver {
                    from: rec.node,
                    to: node,
                    seq: rec.seq,
                    step: rec.msg.step(),
                }),
                NodeEvent::Emitted(rec) => {
                    self.trace_record(&rec);
                    self.net.broadcast(node, &rec, self.sched.as_mut());
                }
                NodeEvent::Advanced { from, to, via } => self.trace.push(EventBody::Advance {
                    node,
                    from_step: from,
                    to_step: to,
                    via,
                }),
                NodeEvent::Resolved(view) => {
                    if self.revealed.insert(view.round) {
                        for &(proposer, ticket) in
                            self.tickets.get(&view.round).into_iter().flatten()
                        {
                            self.trace.push(EventBody::Reveal {
                                round: view.round,
                                node: proposer,
                                ticket,
                            });
                        }
                    }
                    self.trace.push(EventBody::Resolve {
                        round: view.round,
                        node,
                        choice: view.best,
                        confirmed: view.confirmed.clone(),
                        reconfirmed: view.reconfirmed.clone(),
                        seen: view.seen.clone(),
                    });
                    if view.committed {
                        self.chains[i].commit(view.round, view.best);
                        let finalized = self.try_finalize(i)?;
                        self.trace.push(EventBody::Commit {
                            round: view.round,
                            node,
                            choice: view.best,
                            proposer: view.best.node,
                            block_hash: self
                                .blocks
                                .block_for(view.best)
                                .map(|b| hex::encode(b.hash)),
                        });
                        self.trace_finalized(node, finalized);
                    }
                }
            }
        }
        let finalized = self.try_finalize(i)?;
        self.trace_finalized(node, finalized);
        Ok(())
    }

    fn try_finalize(&mut self, i: usize) -> Result<Option<Finalized>, SimError> {
        if !self.chains[i].pending() {
            return Ok(None);
        }
        Ok(
            self.chains[i].try_finalize(
                self.nodes[i].delivered(),
                &self.store,
                &mut self.blocks,
            )?,
        )
    }

    fn trace_finalized(&mut self, node: NodeId, finalized: Option<Finalized>) {
        if let Some(f) = finalized {
            self.trace.push(EventBody::Finalize {
                node,
                base: hex::encode(f.base),
                blocks: f
                    .blocks
                    .iter()
                    .map(|b| BlockInfo {
                        round: b.round,
                        proposer: b.proposer,
                        hash: hex::encode(b.hash),
                        parent: hex::encode(b.parent),
                        txs: b.txs.len(),
                    })
                    .collect(),
                chain_head: hex::encode(f.head),
            });
        }
    }

    fn trace_record(&mut self, rec: &Arc<LogRecord>) {
        let vt = rec.vt.as_slice().to_vec();
        let body = match &rec.msg {
            Message::Raw(raw) => EventBody::Raw {
                from: rec.node,
                seq: rec.seq,
                step: raw.step,
                vt,
                advanced_on: raw.advanced_on.clone(),
                proposal: raw.payload.proposal.as_ref().map(|p| ProposalInfo {
                    round: p.round,
                    ticket_commitment: p.ticket.commitment(p.round, p.proposer),
                    txs: p.txs.len(),
                }),
                resolutions: raw
                    .payload
                    .resolutions
                    .iter()
                    .map(|r| ResolutionInfo {
                        round: r.round,
                        choice: r.choice,
                    })
                    .collect(),
            },
            Message::Ack(ack) => EventBody::Ack {
                from: rec.node,
                seq: rec.seq,
                step: ack.step,
                vt,
                of: ack.of,
            },
            Message::Cert(cert) => EventBody::Cert {
                from: rec.node,
                seq: rec.seq,
                step: cert.step,
                vt,
                of: cert.of,
                ackers: cert.ackers.clone(),
            },
        };
        self.trace.push(body);
        if let Some(p) = rec.msg.proposal() {
            self.trace.push(EventBody::Propose {
                round: p.round,
                node: p.proposer,
                ticket_commitment: p.ticket.commitment(p.round, p.proposer),
            });
            self.tickets
                .entry(p.round)
                .or_default()
                .push((p.proposer, p.ticket.value));
            if self.revealed.contains(&p.round) {
                self.trace.push(EventBody::Reveal {
                    round: p.round,
                    node: p.proposer,
                    ticket: p.ticket.value,
                });
            }
        }
    }
}
