//! Post-hoc property checking over recorded traces.
//!
//! The checker replays a trace with its own bookkeeping (what each node has
//! delivered, which records exist, which messages are certified) and never
//! consults protocol state, so it can vet traces from any implementation
//! that writes the same format.

pub mod exhaustive;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::message::MessageKind;
use crate::qsc::{BlockStore, QscConfig};
use crate::trace::{EndStatus, Event, EventBody, Trace, TraceHeader};
use crate::types::{NodeId, RecordId, Round, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// Records carry consistent authorship, sequence numbers and references.
    Authenticity,
    /// A node's step never goes backwards and raws go out at the current step.
    Monotonicity,
    /// When a node reaches `s + 1`, at least `t_m` nodes are at `s` or later.
    Pacing,
    /// At most one raw per sender per step is delivered to a node.
    SingleDelivery,
    /// A node broadcasts at most one raw per step.
    SingleBroadcast,
    /// Deliveries respect causal order (and so per-sender FIFO).
    CausalDelivery,
    /// Every record's vector clock is its author's delivered clock.
    VectorTimestamps,
    /// Acks are for delivered raws of the acker's current step.
    Witnessing,
    /// Certs are backed by `t_w` delivered acks of the issuer's own raw.
    Certification,
    /// A raw for `s + 1` names `t_m` certified step-`s` messages its author knew.
    AdvanceEvidence,
    /// No raw for `s + 1` is sent before global period `s` starts.
    PeriodBound1,
    /// Every certified step-`s` raw was sent before period `s + 1` starts.
    PeriodBound2,
    /// Every certified step-`s` raw is known to every node on reaching `s + 2`.
    TwoStepBroadcast,
    /// A quiescent run with feasible thresholds leaves only delay-set traffic
    /// pending and every other node at the final step.
    Liveness,
    /// Ticket values are revealed only once their round is over.
    TicketSecrecy,
    /// Published round views agree with what the node actually knew.
    RoundView,
    /// Whenever anyone commits a proposal, every node resolves to it.
    CommitSafety,
    /// Finalized chains are prefixes of one another.
    PrefixConsistency,
    /// A node only ever extends its finalized chain.
    Irrevocability,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        write!(f, "{}", s.as_str().expect("string"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub property: Property,
    /// Index of the first offending event.
    pub event: u64,
    pub nodes: Vec<NodeId>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes: Vec<String> = self.nodes.iter().map(|n| n.to_string()).collect();
        write!(
            f,
            "{} at event {} [{}]: {}",
            self.property,
            self.event,
            nodes.join(","),
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("trace has no header")]
    MissingHeader,
    #[error("period boundaries need majority thresholds")]
    NotMajoritarian,
}

/// Real-time extent of global period `s`, in event indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Period {
    pub start: u64,
    /// Start of the next period, if it began.
    pub end: Option<u64>,
}

/// Period `s` starts at the event where a majority of nodes has first
/// reached step `s` or beyond.
pub fn global_periods(trace: &Trace) -> Result<BTreeMap<Step, Period>, CheckError> {
    let header = trace.header().ok_or(CheckError::MissingHeader)?;
    if !(2 * header.t_m > header.n && 2 * header.t_w > header.n) {
        return Err(CheckError::NotMajoritarian);
    }
    Ok(periods_from(&reach_events(trace, header.n), header.n))
}

// Per node: (event, step) each time it starts or advances.
fn reach_events(trace: &Trace, n: usize) -> Vec<Vec<(u64, Step)>> {
    let mut reach = vec![Vec::new(); n];
    for ev in &trace.events {
        match &ev.body {
            EventBody::Start { node } if node.index() < n => reach[node.index()].push((ev.e, 0)),
            EventBody::Advance { node, to_step, .. } if node.index() < n => {
                reach[node.index()].push((ev.e, *to_step))
            }
            _ => {}
        }
    }
    reach
}

fn first_reach(reach: &[(u64, Step)], s: Step) -> Option<u64> {
    // Steps can be non-monotone in a corrupted trace, so scan.
    reach.iter().find(|&&(_, st)| st >= s).map(|&(e, _)| e)
}

fn periods_from(reach: &[Vec<(u64, Step)>], n: usize) -> BTreeMap<Step, Period> {
    let majority = n / 2 + 1;
    let top = reach.iter().flatten().map(|&(_, s)| s).max().unwrap_or(0);
    let mut starts = BTreeMap::new();
    for s in 0..=top {
        let mut firsts: Vec<u64> = reach.iter().filter_map(|r| first_reach(r, s)).collect();
        if firsts.len() < majority {
            break;
        }
        firsts.sort_unstable();
        starts.insert(s, firsts[majority - 1]);
    }
    starts
        .iter()
        .map(|(&s, &start)| {
            (
                s,
                Period {
                    start,
                    end: starts.get(&(s + 1)).copied(),
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug)]
struct RecInfo {
    kind: MessageKind,
    step: Step,
    vt: Vec<u32>,
    advanced_on: Vec<RecordId>,
    of: Option<RecordId>,
    proposal_round: Option<Round>,
    emitted_at: u64,
}

struct Checker<'a> {
    h: &'a TraceHeader,
    qsc: QscConfig,
    found: BTreeMap<Property, Violation>,
    records: HashMap<RecordId, RecInfo>,
    emitted: Vec<u32>,
    delivered: Vec<Vec<u32>>,
    step: Vec<Option<Step>>,
    raw_steps: Vec<BTreeSet<Step>>,
    raw_deliveries: HashSet<(NodeId, NodeId, Step)>,
    // raw id -> cert ids certifying it
    certified_by: HashMap<RecordId, Vec<RecordId>>,
    certs_by_step: BTreeMap<Step, Vec<RecordId>>,
    raws_by_step: BTreeMap<Step, Vec<RecordId>>,
    tickets: HashMap<(Round, NodeId), u64>,
    // (acked raw, acker) -> ack records
    acks: HashMap<(RecordId, NodeId), Vec<RecordId>>,
    // delivered clock of each node at each start/advance
    snapshots: Vec<Vec<(Step, Vec<u32>)>>,
    reach: Vec<Vec<(u64, Step)>>,
    period_start: BTreeMap<Step, u64>,
    resolutions: BTreeMap<Round, Vec<(u64, NodeId, RecordId)>>,
    commits: BTreeMap<Round, Vec<(u64, NodeId, RecordId)>>,
    chains: Vec<Vec<(i64, String, Option<NodeId>)>>,
    end: Option<&'a Event>,
}

/// Check every property the header's configuration calls for. Returns the
/// first violation of each property, ordered by property.
pub fn check_all(trace: &Trace) -> Result<Vec<Violation>, CheckError> {
    let h = trace.header().ok_or(CheckError::MissingHeader)?;
    let n = h.n;
    let mut c = Checker {
        h,
        qsc: QscConfig {
            rounds: h.rounds,
            pipeline: h.pipeline,
            ..QscConfig::default()
        },
        found: BTreeMap::new(),
        records: HashMap::new(),
        emitted: vec![0; n],
        delivered: vec![vec![0; n]; n],
        step: vec![None; n],
        raw_steps: vec![BTreeSet::new(); n],
        raw_deliveries: HashSet::new(),
        certified_by: HashMap::new(),
        certs_by_step: BTreeMap::new(),
        raws_by_step: BTreeMap::new(),
        tickets: HashMap::new(),
        acks: HashMap::new(),
        snapshots: vec![Vec::new(); n],
        reach: vec![Vec::new(); n],
        period_start: BTreeMap::new(),
        resolutions: BTreeMap::new(),
        commits: BTreeMap::new(),
        chains: vec![Vec::new(); n],
        end: None,
    };
    for ev in &trace.events {
        c.event(ev);
    }
    c.finish(trace);
    Ok(c.found.into_values().collect())
}

impl<'a> Checker<'a> {
    fn flag(&mut self, property: Property, event: u64, nodes: Vec<NodeId>, detail: String) {
        self.found.entry(property).or_insert(Violation {
            property,
            event,
            nodes,
            detail,
        });
    }

    fn valid(&self, node: NodeId) -> bool {
        node.index() < self.h.n
    }

    fn covers(&self, node: NodeId, id: RecordId) -> bool {
        self.valid(id.node) && id.seq < self.delivered[node.index()][id.node.index()]
    }

    fn majoritarian(&self) -> bool {
        2 * self.h.t_m > self.h.n && 2 * self.h.t_w > self.h.n
    }

    fn event(&mut self, ev: &'a Event) {
        let e = ev.e;
        match &ev.body {
            EventBody::Header(_) | EventBody::DelaySet { .. } | EventBody::Propose { .. } => {}
            EventBody::Start { node } => {
                if !self.valid(*node) {
                    return self.flag(
                        Property::Authenticity,
                        e,
                        vec![*node],
                        "unknown node".into(),
                    );
                }
                if self.step[node.index()].is_some() {
                    self.flag(
                        Property::Monotonicity,
                        e,
                        vec![*node],
                        "node started twice".into(),
                    );
                }
                self.step[node.index()] = Some(0);
                self.reached(e, node.index(), 0, 0);
            }
            EventBody::Raw {
                from,
                seq,
                step,
                vt,
                advanced_on,
                proposal,
                ..
            } => {
                let info = RecInfo {
                    kind: MessageKind::Raw,
                    step: *step,
                    vt: vt.clone(),
                    advanced_on: advanced_on.clone(),
                    of: None,
                    proposal_round: proposal.as_ref().map(|p| p.round),
                    emitted_at: e,
                };
                if self.emit(e, *from, *seq, info) {
                    self.check_raw(e, *from, *seq, *step, advanced_on);
                }
            }
            EventBody::Ack {
                from,
                seq,
                step,
                vt,
                of,
            } => {
                let info = RecInfo {
                    kind: MessageKind::Ack,
                    step: *step,
                    vt: vt.clone(),
                    advanced_on: Vec::new(),
                    of: Some(*of),
                    proposal_round: None,
                    emitted_at: e,
                };
                if self.emit(e, *from, *seq, info) {
                    self.check_ack(e, *from, *step, *of);
                }
            }
            EventBody::Cert {
                from,
                seq,
                step,
                vt,
                of,
                ackers,
            } => {
                let info = RecInfo {
                    kind: MessageKind::Cert,
                    step: *step,
                    vt: vt.clone(),
                    advanced_on: Vec::new(),
                    of: Some(*of),
                    proposal_round: None,
                    emitted_at: e,
                };
                if self.emit(e, *from, *seq, info) {
                    self.check_cert(e, *from, *seq, *step, *of, ackers);
                }
            }
            EventBody::Deliver {
                from,
                to,
                seq,
                step,
            } => self.deliver(e, *from, *to, *seq, *step),
            EventBody::Advance {
                node,
                from_step,
                to_step,
                ..
            } => self.advance(e, *node, *from_step, *to_step),
            EventBody::Reveal {
                round,
                node,
                ticket,
            } => {
                let end = self.qsc.round_end(*round);
                let over = self.step.iter().flatten().any(|&s| s >= end);
                if !over {
                    self.flag(
                        Property::TicketSecrecy,
                        e,
                        vec![*node],
                        format!(
                            "ticket for round {round} revealed before any node reached step {end}"
                        ),
                    );
                }
                self.tickets.insert((*round, *node), *ticket);
            }
            EventBody::Resolve {
                round,
                node,
                choice,
                confirmed,
                reconfirmed,
                seen,
            } => self.resolve(e, *round, *node, *choice, confirmed, reconfirmed, seen),
            EventBody::Commit {
                round,
                node,
                choice,
                ..
            } => self.commit(e, *round, *node, *choice),
            EventBody::Finalize {
                node,
                base,
                blocks,
                chain_head,
            } => {
                if !self.valid(*node) {
                    return;
                }
                let chain = &self.chains[node.index()];
                let head = chain
                    .last()
                    .map_or_else(|| hex::encode(BlockStore::new().genesis()), |b| b.1.clone());
                let mut problem = None;
                if *base != head {
                    problem = Some(format!("extends {base} but finalized head is {head}"));
                }
                let mut parent = base.clone();
                let mut round = chain.last().map_or(-1, |b| b.0);
                for b in blocks {
                    if b.parent != parent || b.round != round + 1 {
                        problem
                            .get_or_insert(format!("block {} does not extend the chain", b.hash));
                    }
                    parent = b.hash.clone();
                    round = b.round;
                }
                if *chain_head != parent {
                    problem.get_or_insert("reported head is not the last block".into());
                }
                if let Some(detail) = problem {
                    self.flag(Property::Irrevocability, e, vec![*node], detail);
                }
                self.chains[node.index()]
                    .extend(blocks.iter().map(|b| (b.round, b.hash.clone(), b.proposer)));
            }
            EventBody::End { .. } => self.end = Some(ev),
        }
    }

    /// Register a new record and check its identity and clock. Returns
    /// whether the record was well-formed enough to check further.
    fn emit(&mut self, e: u64, from: NodeId, seq: u32, info: RecInfo) -> bool {
        if !self.valid(from) || info.vt.len() != self.h.n {
            self.flag(
                Property::Authenticity,
                e,
                vec![from],
                "malformed record".into(),
            );
            return false;
        }
        let i = from.index();
        if seq != self.emitted[i] {
            self.flag(
                Property::Authenticity,
                e,
                vec![from],
                format!("sequence number {seq}, expected {}", self.emitted[i]),
            );
            return false;
        }
        if self.step[i].is_none() {
            self.flag(
                Property::Authenticity,
                e,
                vec![from],
                "record from unstarted node".into(),
            );
        }
        self.emitted[i] += 1;
        self.delivered[i][i] += 1;
        if info.vt != self.delivered[i] {
            self.flag(
                Property::VectorTimestamps,
                e,
                vec![from],
                format!(
                    "vt {:?} but delivered clock is {:?}",
                    info.vt, self.delivered[i]
                ),
            );
        }
        let id = RecordId::new(from, seq);
        match info.kind {
            MessageKind::Raw => self.raws_by_step.entry(info.step).or_default().push(id),
            MessageKind::Cert => {
                self.certs_by_step.entry(info.step).or_default().push(id);
                if let Some(of) = info.of {
                    self.certified_by.entry(of).or_default().push(id);
                }
            }
            MessageKind::Ack => {
                if let Some(of) = info.of {
                    self.acks.entry((of, from)).or_default().push(id);
                }
            }
        }
        self.records.insert(id, info);
        true
    }

    fn check_raw(&mut self, e: u64, from: NodeId, seq: u32, step: Step, advanced_on: &[RecordId]) {
        let i = from.index();
        if self.step[i] != Some(step) {
            self.flag(
                Property::Monotonicity,
                e,
                vec![from],
                format!("raw for step {step} while node is at {:?}", self.step[i]),
            );
        }
        if !self.raw_steps[i].insert(step) {
            self.flag(
                Property::SingleBroadcast,
                e,
                vec![from],
                format!("second raw at step {step}"),
            );
        }
        if self.majoritarian() && step > 0 && !self.period_start.contains_key(&(step - 1)) {
            self.flag(
                Property::PeriodBound1,
                e,
                vec![from],
                format!("raw for step {step} before period {} began", step - 1),
            );
        }
        if step == 0 {
            return;
        }
        let mut problem = None;
        if advanced_on.len() < self.h.t_m {
            problem = Some(format!(
                "advanced on {} messages, need {}",
                advanced_on.len(),
                self.h.t_m
            ));
        }
        let mut authors = BTreeSet::new();
        for &m in advanced_on {
            let ok = match self.records.get(&m) {
                Some(r) => {
                    r.kind == MessageKind::Raw
                        && r.step == step - 1
                        && self.covers(from, m)
                        && authors.insert(m.node)
                        && (self.h.t_w == 0 || self.certified_known(from, m))
                }
                None => false,
            };
            if !ok {
                problem.get_or_insert(format!(
                    "{m} is not a known certified step-{} message",
                    step - 1
                ));
            }
        }
        if let Some(detail) = problem {
            self.flag(
                Property::AdvanceEvidence,
                e,
                vec![from],
                format!("raw {} at step {step}: {detail}", RecordId::new(from, seq)),
            );
        }
    }

    fn certified_known(&self, node: NodeId, raw: RecordId) -> bool {
        self.certified_by
            .get(&raw)
            .is_some_and(|certs| certs.iter().any(|&c| self.covers(node, c)))
    }

    fn check_ack(&mut self, e: u64, from: NodeId, step: Step, of: RecordId) {
        let problem = match self.records.get(&of) {
            None => Some(format!("acks unknown record {of}")),
            Some(r) if r.kind != MessageKind::Raw => Some(format!("acks non-raw record {of}")),
            Some(r) if r.step != step => {
                Some(format!("ack for step {step} of a step-{} raw", r.step))
            }
            Some(_) if of.node == from => Some("acks its own raw".into()),
            Some(_) if !self.covers(from, of) => Some(format!("acks undelivered raw {of}")),
            Some(_) if self.step[from.index()] != Some(step) => Some(format!(
                "ack for step {step} while at step {:?}",
                self.step[from.index()]
            )),
            Some(_) => None,
        };
        if let Some(detail) = problem {
            self.flag(Property::Witnessing, e, vec![from], detail);
        }
    }

    fn check_cert(
        &mut self,
        e: u64,
        from: NodeId,
        seq: u32,
        step: Step,
        of: RecordId,
        ackers: &[NodeId],
    ) {
        let mut problem = None;
        match self.records.get(&of) {
            Some(r) if r.kind == MessageKind::Raw && r.step == step && of.node == from => {}
            _ => {
                problem = Some(format!(
                    "certifies {of}, which is not its own step-{step} raw"
                ))
            }
        }
        let distinct: BTreeSet<NodeId> = ackers.iter().copied().collect();
        if distinct.len() != ackers.len() || ackers.len() < self.h.t_w || self.h.t_w == 0 {
            problem.get_or_insert(format!(
                "{} ackers, need {} distinct",
                ackers.len(),
                self.h.t_w
            ));
        }
        let cert_id = RecordId::new(from, seq);
        for &a in ackers {
            let backed = if a == from {
                self.h.self_ack
            } else {
                self.acks.get(&(of, a)).is_some_and(|acks| {
                    acks.iter()
                        .any(|&id| id != cert_id && self.covers(from, id))
                })
            };
            if !backed {
                problem.get_or_insert(format!("acker {a} has no delivered ack of {of}"));
            }
        }
        if self.step[from.index()] != Some(step) {
            problem.get_or_insert(format!(
                "cert for step {step} issued at step {:?}",
                self.step[from.index()]
            ));
        }
        if let Some(detail) = problem {
            self.flag(Property::Certification, e, vec![from], detail);
        }
        if self.majoritarian() {
            let raw_at = self.records.get(&of).map(|r| r.emitted_at);
            if let (Some(&start), Some(raw_at)) = (self.period_start.get(&(step + 1)), raw_at) {
                if raw_at >= start {
                    self.flag(
                        Property::PeriodBound2,
                        e,
                        vec![from],
                        format!("certified {of} was sent after period {} began", step + 1),
                    );
                }
            }
        }
    }

    fn deliver(&mut self, e: u64, from: NodeId, to: NodeId, seq: u32, step: Step) {
        if !self.valid(from) || !self.valid(to) || from == to {
            return self.flag(
                Property::Authenticity,
                e,
                vec![from, to],
                "bad delivery endpoints".into(),
            );
        }
        let id = RecordId::new(from, seq);
        let Some(rec) = self.records.get(&id) else {
            return self.flag(
                Property::Authenticity,
                e,
                vec![from, to],
                format!("delivery of nonexistent record {id}"),
            );
        };
        let have = &self.delivered[to.index()];
        let fifo = have[from.index()] == seq;
        let deps = rec
            .vt
            .iter()
            .zip(have)
            .enumerate()
            .all(|(k, (need, got))| k == from.index() || need <= got);
        let (kind, rec_step) = (rec.kind, rec.step);
        if rec_step != step {
            self.flag(
                Property::Authenticity,
                e,
                vec![from, to],
                format!("delivery of {id} misreports its step"),
            );
        }
        if !fifo || !deps {
            self.flag(
                Property::CausalDelivery,
                e,
                vec![from, to],
                format!("{id} delivered to {to} out of causal order"),
            );
        }
        if kind == MessageKind::Raw && !self.raw_deliveries.insert((from, to, rec_step)) {
            self.flag(
                Property::SingleDelivery,
                e,
                vec![from, to],
                format!("second step-{rec_step} raw from {from} delivered to {to}"),
            );
        }
        let d = &mut self.delivered[to.index()][from.index()];
        *d = (*d).max(seq + 1);
    }

    fn advance(&mut self, e: u64, node: NodeId, from_step: Step, to_step: Step) {
        if !self.valid(node) {
            return;
        }
        let i = node.index();
        if self.step[i] != Some(from_step) || to_step <= from_step {
            self.flag(
                Property::Monotonicity,
                e,
                vec![node],
                format!(
                    "advance {from_step} -> {to_step} while at step {:?}",
                    self.step[i]
                ),
            );
        }
        if to_step > self.h.max_step {
            self.flag(
                Property::Monotonicity,
                e,
                vec![node],
                format!("advanced past max step to {to_step}"),
            );
        }
        let behind = to_step.saturating_sub(1);
        let ready = self.step.iter().flatten().filter(|&&s| s >= behind).count();
        if ready < self.h.t_m {
            self.flag(
                Property::Pacing,
                e,
                vec![node],
                format!("reached step {to_step} with only {ready} nodes at step {behind} or later"),
            );
        }
        self.step[i] = Some(to_step);
        self.reached(e, i, from_step + 1, to_step);
    }

    fn reached(&mut self, e: u64, i: usize, from: Step, to: Step) {
        self.reach[i].push((e, to));
        self.snapshots[i].push((to, self.delivered[i].clone()));
        let majority = self.h.n / 2 + 1;
        for s in from..=to {
            if self.period_start.contains_key(&s) {
                continue;
            }
            let count = self.step.iter().flatten().filter(|&&st| st >= s).count();
            if count >= majority {
                self.period_start.insert(s, e);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn resolve(
        &mut self,
        e: u64,
        round: Round,
        node: NodeId,
        choice: RecordId,
        confirmed: &[RecordId],
        reconfirmed: &[RecordId],
        seen: &[RecordId],
    ) {
        if !self.valid(node) {
            return;
        }
        self.resolutions
            .entry(round)
            .or_default()
            .push((e, node, choice));
        let s = self.qsc.round_start(round);
        let proposal_of = |id: &RecordId| {
            self.records
                .get(id)
                .is_some_and(|r| r.kind == MessageKind::Raw && r.proposal_round == Some(round))
        };
        let known_certified = |step: Step| -> BTreeSet<RecordId> {
            self.certs_by_step
                .get(&step)
                .into_iter()
                .flatten()
                .filter(|&&c| self.covers(node, c))
                .filter_map(|c| self.records[c].of)
                .collect()
        };
        let want_confirmed: BTreeSet<RecordId> =
            known_certified(s).into_iter().filter(proposal_of).collect();
        let paparazzi = known_certified(s + 1);
        let want_reconfirmed: BTreeSet<RecordId> = want_confirmed
            .iter()
            .copied()
            .filter(|p| {
                paparazzi.iter().any(|m| {
                    self.records
                        .get(m)
                        .is_some_and(|r| r.advanced_on.contains(p))
                })
            })
            .collect();
        let known_seen: BTreeSet<RecordId> = self
            .raws_by_step
            .get(&s)
            .into_iter()
            .flatten()
            .copied()
            .filter(|id| proposal_of(id) && self.covers(node, *id))
            .collect();
        let got_confirmed: BTreeSet<RecordId> = confirmed.iter().copied().collect();
        let got_reconfirmed: BTreeSet<RecordId> = reconfirmed.iter().copied().collect();
        let got_seen: BTreeSet<RecordId> = seen.iter().copied().collect();
        let ticket = |id: &RecordId| self.tickets.get(&(round, id.node)).copied();
        let best = want_confirmed
            .iter()
            .max_by_key(|id| (ticket(id), std::cmp::Reverse(id.node)))
            .copied();
        let mut problem = None;
        if got_confirmed != want_confirmed {
            problem = Some(format!(
                "confirmed {got_confirmed:?}, history shows {want_confirmed:?}"
            ));
        } else if got_reconfirmed != want_reconfirmed {
            problem = Some(format!(
                "reconfirmed {got_reconfirmed:?}, history shows {want_reconfirmed:?}"
            ));
        } else if !got_seen.is_subset(&known_seen)
            || (!self.h.strict_horizon && got_seen != known_seen)
            || !got_confirmed.is_subset(&got_seen)
        {
            problem = Some(format!("seen {got_seen:?}, history shows {known_seen:?}"));
        } else if best != Some(choice) {
            problem = Some(format!("chose {choice}, best confirmed is {best:?}"));
        }
        if let Some(detail) = problem {
            self.flag(
                Property::RoundView,
                e,
                vec![node],
                format!("round {round}: {detail}"),
            );
        }
    }

    fn commit(&mut self, e: u64, round: Round, node: NodeId, choice: RecordId) {
        if !self.valid(node) {
            return;
        }
        self.commits
            .entry(round)
            .or_default()
            .push((e, node, choice));
        let resolved = self
            .resolutions
            .get(&round)
            .and_then(|rs| rs.iter().rev().find(|(_, n, _)| *n == node));
        let ticket = |id: &RecordId| self.tickets.get(&(round, id.node)).copied();
        let mut problem = None;
        match resolved {
            Some((_, _, c)) if *c == choice => {}
            _ => problem = Some(format!("committed {choice} without resolving to it")),
        }
        let top = ticket(&choice);
        let spoiler = self
            .raws_by_step
            .get(&self.qsc.round_start(round))
            .into_iter()
            .flatten()
            .find(|&&q| {
                q != choice
                    && self.covers(node, q)
                    && self.records[&q].proposal_round == Some(round)
                    && ticket(&q) >= top
                    && !self.h.strict_horizon
            });
        if let Some(q) = spoiler {
            problem.get_or_insert(format!("committed {choice} despite spoiler {q}"));
        }
        if let Some(detail) = problem {
            self.flag(
                Property::RoundView,
                e,
                vec![node],
                format!("round {round}: {detail}"),
            );
        }
    }

    fn finish(&mut self, trace: &Trace) {
        self.finish_consensus();
        if self.majoritarian() {
            self.finish_two_step();
        }
        self.finish_liveness(trace);
    }

    fn finish_consensus(&mut self) {
        let mut flagged = Vec::new();
        for (round, commits) in &self.commits {
            let resolutions = self.resolutions.get(round).cloned().unwrap_or_default();
            for &(ce, cn, choice) in commits {
                if let Some(&(re, rn, other)) = resolutions.iter().find(|(_, _, c)| *c != choice) {
                    flagged.push(Violation {
                        property: Property::CommitSafety,
                        event: ce.max(re),
                        nodes: vec![cn, rn],
                        detail: format!(
                            "round {round}: {cn} committed {choice} but {rn} resolved {other}"
                        ),
                    });
                }
                for (i, chain) in self.chains.iter().enumerate() {
                    if let Some(b) = chain.iter().find(|b| b.0 == *round as i64) {
                        if b.2 != Some(choice.node) {
                            let detail = format!(
                                "round {round}: {cn} committed {choice} but n{i} finalized a block by {:?}",
                                b.2
                            );
                            flagged.push(Violation {
                                property: Property::CommitSafety,
                                event: ce,
                                nodes: vec![cn, NodeId(i as u32)],
                                detail,
                            });
                        }
                    }
                }
            }
        }
        if let Some(first) = flagged.into_iter().min_by_key(|v| v.event) {
            self.flag(first.property, first.event, first.nodes, first.detail);
        }
        let end_e = self.end.map_or(0, |ev| ev.e);
        for i in 0..self.chains.len() {
            for j in i + 1..self.chains.len() {
                let (a, b) = (&self.chains[i], &self.chains[j]);
                let common = a.len().min(b.len());
                if a[..common]
                    .iter()
                    .map(|x| &x.1)
                    .ne(b[..common].iter().map(|x| &x.1))
                {
                    self.flag(
                        Property::PrefixConsistency,
                        end_e,
                        vec![NodeId(i as u32), NodeId(j as u32)],
                        "finalized chains diverge".into(),
                    );
                }
            }
        }
    }

    fn finish_two_step(&mut self) {
        let mut violation = None;
        'outer: for (raw, certs) in &self.certified_by {
            let Some(info) = self.records.get(raw) else {
                continue;
            };
            if certs.iter().all(|c| {
                self.records
                    .get(c)
                    .is_none_or(|r| r.kind != MessageKind::Cert)
            }) {
                continue;
            }
            for (i, snaps) in self.snapshots.iter().enumerate() {
                let k = snaps.partition_point(|(s, _)| *s < info.step + 2);
                let Some((_, vt)) = snaps.get(k) else {
                    continue;
                };
                if raw.seq >= vt[raw.node.index()] {
                    let at = self.reach[i]
                        .iter()
                        .find(|(_, s)| *s >= info.step + 2)
                        .map_or(0, |(e, _)| *e);
                    let cand = (at, i, *raw, info.step);
                    if violation.is_none_or(|v: (u64, usize, RecordId, Step)| cand < v) {
                        violation = Some(cand);
                    }
                    continue 'outer;
                }
            }
        }
        if let Some((e, i, raw, s)) = violation {
            self.flag(
                Property::TwoStepBroadcast,
                e,
                vec![NodeId(i as u32), raw.node],
                format!(
                    "n{i} reached step {} without certified step-{s} raw {raw}",
                    s + 2
                ),
            );
        }
    }

    fn finish_liveness(&mut self, _trace: &Trace) {
        let Some(end) = self.end else { return };
        let EventBody::End {
            status,
            delay_set,
            pending,
            ..
        } = &end.body
        else {
            return;
        };
        let live = self.h.n - self.h.f_d;
        if *status != EndStatus::Quiescent || self.h.t_m > live || self.h.t_w > live {
            return;
        }
        if let Some(p) = pending.iter().find(|p| !delay_set.contains(&p.from)) {
            return self.flag(
                Property::Liveness,
                end.e,
                vec![p.from, p.to],
                format!(
                    "quiescent with live message {}#{} to {} pending",
                    p.from, p.seq, p.to
                ),
            );
        }
        let stuck: Vec<NodeId> = NodeId::all(self.h.n)
            .filter(|id| !delay_set.contains(id))
            .filter(|id| self.step[id.index()] != Some(self.h.max_step))
            .collect();
        if !stuck.is_empty() {
            self.flag(
                Property::Liveness,
                end.e,
                stuck.clone(),
                format!(
                    "live nodes {stuck:?} stopped short of step {}",
                    self.h.max_step
                ),
            );
        }
    }
}
