//! Exhaustive exploration of every delivery order for tiny instances.
//!
//! Enumerating the real message-passing system is hopeless even for three
//! nodes: every record carries a vector timestamp and nearly every
//! reordering yields a distinct one. The explorer instead runs a compact
//! model of the same protocol in which a record's causal history is a
//! bitset over raw and certificate records. Acknowledgements never appear
//! in histories, so a receiver may take a record before acks that causally
//! precede it. That only adds behaviours: every run of the real nodes is a
//! run of the model with the same round outcomes, so a safe verdict carries
//! over. An unsafe verdict is only reported once the offending schedule has
//! been replayed through the real nodes and broke safety there too.
//!
//! Further reductions, all exact:
//! - records that cannot change anything the receiver will still use are
//!   delivered only when something that depends on them is;
//! - nodes that reached the last step receive nothing more;
//! - states are memoized on a canonical key that drops history bits every
//!   pending receiver already holds and data no node can read any more.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;

use crate::causality::{deliverable, LogRecord, RecordStore};
use crate::error::{ConfigError, ProtocolError};
use crate::message::Message;
use crate::node::Node;
use crate::qsc::{decide, CommitRule, QscConfig, TicketSource};
use crate::rng::SplitMix64;
use crate::tlc::TlcConfig;
use crate::types::{NodeId, Round, Step};

/// Largest instance the compact model can encode.
pub const MAX_NODES: usize = 4;
pub const MAX_ROUNDS: Round = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExhaustiveConfig {
    pub n: usize,
    pub t_m: usize,
    pub t_w: usize,
    pub rounds: Round,
    pub commit_rule: CommitRule,
    /// Ticket of each node; distinct values by default.
    pub tickets: Vec<u64>,
    /// Give up (inconclusively) after this many distinct states.
    pub state_budget: usize,
    /// Give up (inconclusively) on schedules longer than this.
    pub depth_bound: usize,
}

impl ExhaustiveConfig {
    pub fn new(n: usize, t_m: usize, t_w: usize, rounds: Round) -> Self {
        ExhaustiveConfig {
            n,
            t_m,
            t_w,
            rounds,
            commit_rule: CommitRule::Qsc3,
            // Node 0 holds the lowest ticket, so the id tie-break never matters.
            tickets: (1..=n as u64).map(|i| i << 32).collect(),
            state_budget: 20_000_000,
            depth_bound: 10_000,
        }
    }

    pub fn with_rule(mut self, rule: CommitRule) -> Self {
        self.commit_rule = rule;
        self
    }

    fn node_configs(&self) -> Result<(TlcConfig, Arc<QscConfig>), ConfigError> {
        if self.n > MAX_NODES || self.rounds > MAX_ROUNDS {
            return Err(ConfigError::Invalid(format!(
                "exhaustive search supports at most {MAX_NODES} nodes and {MAX_ROUNDS} rounds"
            )));
        }
        let qsc = QscConfig {
            rounds: self.rounds,
            commit_rule: self.commit_rule,
            tickets: TicketSource::Fixed(self.tickets.clone()),
            txs_per_proposal: 0,
            ..QscConfig::default()
        };
        qsc.validate(self.n)?;
        let tlc = TlcConfig::new(self.n, self.t_m, self.t_w)?.with_max_step(qsc.max_step());
        if self.rounds > 0 && self.t_w == 0 {
            return Err(ConfigError::Invalid("consensus needs t_w > 0".into()));
        }
        Ok((tlc, Arc::new(qsc)))
    }
}

/// One delivery: record `seq` of `from`'s log handed to `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Delivery {
    pub from: NodeId,
    pub to: NodeId,
    pub seq: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    /// A schedule of the real nodes, replayable with [`replay`].
    pub schedule: Vec<Delivery>,
    pub round: Round,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Unsafe(Counterexample),
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, Verdict::Safe)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExhaustiveReport {
    pub verdict: Verdict,
    pub states: usize,
    pub terminal_states: usize,
    pub max_depth: usize,
    /// Model states that broke safety but whose schedule did not break the
    /// real nodes.
    pub spurious: usize,
}

/// A record of the compact model, named by what it is rather than where it
/// sits in a log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Item {
    Raw {
        node: usize,
        step: Step,
    },
    Cert {
        node: usize,
        step: Step,
    },
    /// `from` acknowledges the current raw message of `of`.
    Ack {
        from: usize,
        of: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Move {
    to: usize,
    item: Item,
}

fn bit(idx: usize) -> u64 {
    1 << idx
}

fn ones(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            return None;
        }
        let i = mask.trailing_zeros() as usize;
        mask &= mask - 1;
        Some(i)
    })
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Peer {
    step: Step,
    /// Raw and cert records written or delivered.
    known: u64,
    /// Raw and cert records processed by the clock. Equal to `known`
    /// between moves; own records lag behind while a move is in progress.
    raws: u64,
    certs: u64,
    /// Nodes whose ack of our current raw message we hold.
    acks: u8,
    cert_issued: bool,
    /// Four bits per round: zero while open, else `1 + 2 * best + committed`.
    decided: u32,
}

impl Peer {
    fn decision(&self, round: Round) -> Option<(usize, bool)> {
        let d = (self.decided >> (4 * round)) & 0xf;
        (d != 0).then(|| (((d - 1) / 2) as usize, (d - 1) % 2 == 1))
    }
}

#[derive(Clone)]
struct World {
    peers: Vec<Peer>,
    exists: u64,
    /// Causal history of each raw and cert record.
    hist: Vec<u64>,
    /// For raw records, the nodes whose certified messages it advanced on.
    basis: Vec<u8>,
    /// Per owner: nodes that acked the owner's current raw message while
    /// it still needed acks.
    ack_live: Vec<u8>,
    ack_hist: Vec<u64>,
}

struct Model {
    n: usize,
    top: Step,
    t_m: usize,
    t_w: usize,
    qsc: Arc<QscConfig>,
    tickets: Vec<u64>,
    raw_mask: u64,
    /// Per step, the records that are inert for a node at that step.
    inert: Vec<u64>,
    /// Raw records whose advanced-on set a round resolution reads, with the
    /// round.
    witness_raws: Vec<(usize, Round)>,
}

impl Model {
    fn new(cfg: &ExhaustiveConfig, qsc: Arc<QscConfig>) -> Self {
        let n = cfg.n;
        let top = qsc.max_step();
        let bits = 2 * (top as usize + 1) * n;
        assert!(bits <= 56, "instance too large for the compact model");
        let mut m = Model {
            n,
            top,
            t_m: cfg.t_m,
            t_w: cfg.t_w,
            qsc,
            tickets: cfg.tickets.clone(),
            raw_mask: 0,
            inert: Vec::new(),
            witness_raws: Vec::new(),
        };
        for s in 0..=top {
            for k in 0..n {
                m.raw_mask |= bit(m.raw(k, s));
            }
        }
        m.inert = (0..=top).map(|at| m.inert_at(at, bits)).collect();
        for r in 0..cfg.rounds {
            let s = m.qsc.round_start(r) + 1;
            for k in 0..n {
                m.witness_raws.push((m.raw(k, s), r));
            }
        }
        m
    }

    fn raw(&self, node: usize, step: Step) -> usize {
        step as usize * self.n + node
    }

    fn cert(&self, node: usize, step: Step) -> usize {
        (self.top as usize + 1 + step as usize) * self.n + node
    }

    fn idx(&self, item: Item) -> Option<usize> {
        match item {
            Item::Raw { node, step } => Some(self.raw(node, step)),
            Item::Cert { node, step } => Some(self.cert(node, step)),
            Item::Ack { .. } => None,
        }
    }

    fn item(&self, idx: usize) -> Item {
        let per = (self.top as usize + 1) * self.n;
        let node = idx % self.n;
        if idx < per {
            Item::Raw {
                node,
                step: (idx / self.n) as Step,
            }
        } else {
            Item::Cert {
                node,
                step: ((idx - per) / self.n) as Step,
            }
        }
    }

    fn sender(&self, idx: usize) -> usize {
        idx % self.n
    }

    // A round is open at `at` if it starts at `x` and a node at `at` has
    // not resolved it yet.
    fn open_start(&self, x: Step, at: Step) -> bool {
        self.qsc
            .round_starting_at(x)
            .is_some_and(|r| r < self.qsc.rounds && at < self.qsc.round_end(r))
    }

    // Records below the receiver's step that no open round reads.
    fn inert_at(&self, at: Step, bits: usize) -> u64 {
        let mut mask = 0;
        for idx in 0..bits {
            let inert = match self.item(idx) {
                Item::Raw { step, .. } => step < at && !self.open_start(step, at),
                Item::Cert { step, .. } => {
                    step < at
                        && !self.open_start(step, at)
                        && !(step > 0 && self.open_start(step - 1, at))
                }
                Item::Ack { .. } => unreachable!(),
            };
            if inert {
                mask |= bit(idx);
            }
        }
        mask
    }

    fn witnessed(&self) -> bool {
        self.t_w > 0
    }

    fn active(&self, p: &Peer) -> bool {
        p.step < self.top
    }

    fn initial(&self) -> Result<World, String> {
        let bits = 2 * (self.top as usize + 1) * self.n;
        let mut w = World {
            peers: vec![
                Peer {
                    step: 0,
                    known: 0,
                    raws: 0,
                    certs: 0,
                    acks: 0,
                    cert_issued: false,
                    decided: 0,
                };
                self.n
            ],
            exists: 0,
            hist: vec![0; bits],
            basis: vec![0; bits],
            ack_live: vec![0; self.n],
            ack_hist: vec![0; self.n * self.n],
        };
        for j in 0..self.n {
            let mut queue = VecDeque::new();
            self.emit(&mut w, j, Item::Raw { node: j, step: 0 }, 0, &mut queue);
            self.drain(&mut w, j, queue)?;
        }
        Ok(w)
    }

    fn moves(&self, w: &World) -> Vec<Move> {
        let mut out = Vec::new();
        for (j, p) in w.peers.iter().enumerate() {
            if !self.active(p) {
                continue;
            }
            let inert = self.inert[p.step as usize];
            for idx in ones(w.exists & !p.known & !inert) {
                if w.hist[idx] & !p.known & !inert == 0 {
                    out.push(Move {
                        to: j,
                        item: self.item(idx),
                    });
                }
            }
            for k in ones((w.ack_live[j] & !p.acks) as u64) {
                if w.ack_hist[j * self.n + k] & !p.known & !inert == 0 {
                    out.push(Move {
                        to: j,
                        item: Item::Ack { from: k, of: j },
                    });
                }
            }
        }
        out
    }

    fn apply(&self, w: &mut World, mv: Move) -> Result<(), String> {
        let j = mv.to;
        let hist = match self.idx(mv.item) {
            Some(idx) => w.hist[idx],
            None => match mv.item {
                Item::Ack { from, of } => w.ack_hist[of * self.n + from],
                _ => unreachable!(),
            },
        };
        // Inert prerequisites change nothing but the receiver's history.
        let p = &mut w.peers[j];
        let missing = hist & !p.known;
        p.known |= missing;
        p.raws |= missing & self.raw_mask;
        p.certs |= missing & !self.raw_mask;
        if let Some(idx) = self.idx(mv.item) {
            p.known |= bit(idx);
        }
        let mut queue = VecDeque::new();
        self.on_receive(w, j, mv.item, &mut queue)?;
        self.drain(w, j, queue)
    }

    // Own records are processed in emission order after the delivery that
    // produced them.
    fn drain(&self, w: &mut World, j: usize, mut queue: VecDeque<Item>) -> Result<(), String> {
        while let Some(item) = queue.pop_front() {
            self.on_receive(w, j, item, &mut queue)?;
        }
        Ok(())
    }

    fn on_receive(
        &self,
        w: &mut World,
        j: usize,
        item: Item,
        queue: &mut VecDeque<Item>,
    ) -> Result<(), String> {
        match item {
            Item::Raw { node, step } => {
                w.peers[j].raws |= bit(self.raw(node, step));
                if node == j {
                    if step == w.peers[j].step {
                        let p = &mut w.peers[j];
                        p.acks = if self.witnessed() { 1 << j } else { 0 };
                        p.cert_issued = false;
                        self.maybe_certify(w, j, queue);
                    }
                } else {
                    if step > w.peers[j].step {
                        self.catch_up(w, j, step, queue)?;
                    }
                    if step == w.peers[j].step && self.witnessed() {
                        self.emit(w, j, Item::Ack { from: j, of: node }, 0, queue);
                    }
                }
            }
            Item::Ack { from, of } => {
                if of == j {
                    w.peers[j].acks |= 1 << from;
                    self.maybe_certify(w, j, queue);
                }
            }
            Item::Cert { node, step } => {
                w.peers[j].certs |= bit(self.cert(node, step));
                if step > w.peers[j].step {
                    self.catch_up(w, j, step, queue)?;
                }
            }
        }
        self.advance_check(w, j, queue)
    }

    fn emit(&self, w: &mut World, j: usize, item: Item, basis: u8, queue: &mut VecDeque<Item>) {
        match self.idx(item) {
            Some(idx) => {
                w.exists |= bit(idx);
                w.hist[idx] = w.peers[j].known;
                w.basis[idx] = basis;
                w.peers[j].known |= bit(idx);
            }
            None => {
                let Item::Ack { of, .. } = item else {
                    unreachable!()
                };
                let owner = &w.peers[of];
                let live =
                    self.active(owner) && owner.step == w.peers[j].step && !owner.cert_issued;
                if live {
                    w.ack_live[of] |= 1 << j;
                    w.ack_hist[of * self.n + j] = w.peers[j].known;
                }
            }
        }
        queue.push_back(item);
    }

    fn clear_acks(&self, w: &mut World, owner: usize) {
        w.ack_live[owner] = 0;
        w.ack_hist[owner * self.n..(owner + 1) * self.n].fill(0);
    }

    fn maybe_certify(&self, w: &mut World, j: usize, queue: &mut VecDeque<Item>) {
        let p = &w.peers[j];
        if !self.witnessed() || p.cert_issued || (p.acks.count_ones() as usize) < self.t_w {
            return;
        }
        let step = p.step;
        w.peers[j].cert_issued = true;
        self.clear_acks(w, j);
        self.emit(w, j, Item::Cert { node: j, step }, 0, queue);
    }

    // Nodes whose step-`s` messages count toward `j`'s threshold.
    fn counted(&self, p: &Peer, s: Step) -> u8 {
        (0..self.n)
            .filter(|&k| {
                if self.witnessed() {
                    p.certs & bit(self.cert(k, s)) != 0
                } else {
                    p.raws & bit(self.raw(k, s)) != 0
                }
            })
            .fold(0, |m, k| m | 1 << k)
    }

    fn advance_check(
        &self,
        w: &mut World,
        j: usize,
        queue: &mut VecDeque<Item>,
    ) -> Result<(), String> {
        while w.peers[j].step < self.top {
            let basis = self.counted(&w.peers[j], w.peers[j].step);
            match (basis.count_ones() as usize).cmp(&self.t_m) {
                std::cmp::Ordering::Less => break,
                std::cmp::Ordering::Greater => {
                    return Err("threshold overshoot: arrival order would matter".into())
                }
                std::cmp::Ordering::Equal => {}
            }
            let to = w.peers[j].step + 1;
            self.enter(w, j, to, basis, queue)?;
        }
        Ok(())
    }

    fn catch_up(
        &self,
        w: &mut World,
        j: usize,
        target: Step,
        queue: &mut VecDeque<Item>,
    ) -> Result<(), String> {
        let target = target.min(self.top);
        if target <= w.peers[j].step {
            return Ok(());
        }
        let basis = self.counted(&w.peers[j], target - 1);
        if basis.count_ones() as usize > self.t_m {
            return Err("threshold overshoot: arrival order would matter".into());
        }
        self.enter(w, j, target, basis, queue)
    }

    fn enter(
        &self,
        w: &mut World,
        j: usize,
        to: Step,
        basis: u8,
        queue: &mut VecDeque<Item>,
    ) -> Result<(), String> {
        let from = w.peers[j].step;
        let p = &mut w.peers[j];
        p.step = to;
        p.acks = 0;
        p.cert_issued = false;
        self.clear_acks(w, j);
        for s in from + 1..=to {
            if let Some(r) = self.qsc.round_ending_at(s) {
                if w.peers[j].decision(r).is_none() {
                    self.resolve(w, j, r)?;
                }
            }
        }
        self.emit(w, j, Item::Raw { node: j, step: to }, basis, queue);
        Ok(())
    }

    fn resolve(&self, w: &mut World, j: usize, round: Round) -> Result<(), String> {
        let s = self.qsc.round_start(round);
        let p = &w.peers[j];
        let lot = |k: usize| (self.tickets[k], NodeId(k as u32));
        let confirmed: Vec<usize> = (0..self.n)
            .filter(|&k| p.certs & bit(self.cert(k, s)) != 0)
            .collect();
        let witnessed: u8 = (0..self.n)
            .filter(|&m| p.certs & bit(self.cert(m, s + 1)) != 0)
            .fold(0, |acc, m| acc | w.basis[self.raw(m, s + 1)]);
        let reconfirmed: Vec<usize> = confirmed
            .iter()
            .copied()
            .filter(|&k| witnessed & (1 << k) != 0)
            .collect();
        let seen: Vec<usize> = (0..self.n)
            .filter(|&k| p.raws & bit(self.raw(k, s)) != 0)
            .collect();
        let lots = |ks: &[usize]| ks.iter().map(|&k| lot(k)).collect::<Vec<_>>();
        let ((_, best), committed) = decide(
            self.qsc.commit_rule,
            &lots(&confirmed),
            &lots(&reconfirmed),
            &lots(&seen),
        )
        .ok_or_else(|| format!("n{j} confirmed nothing in round {round}"))?;
        let code = 1 + 2 * best.index() as u32 + committed as u32;
        w.peers[j].decided |= code << (4 * round);
        Ok(())
    }

    /// A round some node committed that another node resolved differently.
    fn unsafe_round(&self, w: &World) -> Option<Round> {
        (0..self.qsc.rounds).find(|&r| {
            let decisions: Vec<(usize, bool)> =
                w.peers.iter().filter_map(|p| p.decision(r)).collect();
            decisions
                .iter()
                .any(|&(best, committed)| committed && decisions.iter().any(|&(b, _)| b != best))
        })
    }

    /// Canonical description of everything that can still influence the
    /// future. Each word after the per-node words is self-describing.
    fn key(&self, w: &World) -> Box<[u64]> {
        let mut key = Vec::with_capacity(32);
        for p in &w.peers {
            debug_assert_eq!(p.raws | p.certs, p.known);
            if self.active(p) {
                key.push(
                    p.step
                        | (p.acks as u64) << 8
                        | (p.cert_issued as u64) << 16
                        | (p.decided as u64) << 32,
                );
                key.push(p.known);
            } else {
                key.push(p.step | (p.decided as u64) << 32);
            }
        }
        key.push(w.exists);
        for idx in ones(w.exists) {
            let sender = self.sender(idx);
            let mut common = u64::MAX;
            let mut pending = false;
            for (j, p) in w.peers.iter().enumerate() {
                if j != sender && self.active(p) && p.known & bit(idx) == 0 {
                    common &= p.known;
                    pending = true;
                }
            }
            let h = w.hist[idx] & !common;
            if pending && h != 0 {
                key.push((idx as u64) << 56 | h);
            }
        }
        for &(idx, round) in &self.witness_raws {
            let readers = w
                .peers
                .iter()
                .any(|p| self.active(p) && p.decision(round).is_none());
            if readers && w.exists & bit(idx) != 0 {
                key.push((64 + idx as u64) << 56 | w.basis[idx] as u64);
            }
        }
        for (o, p) in w.peers.iter().enumerate() {
            for k in ones((w.ack_live[o] & !p.acks) as u64) {
                let h = w.ack_hist[o * self.n + k] & !p.known;
                key.push((128 + (o * self.n + k) as u64) << 56 | h);
            }
        }
        key.into_boxed_slice()
    }
}

#[derive(Clone)]
struct State {
    nodes: Vec<Node>,
    store: RecordStore,
}

impl State {
    fn initial(cfg: &ExhaustiveConfig) -> Result<State, ConfigError> {
        let (tlc, qsc) = cfg.node_configs()?;
        let mut store = RecordStore::new(cfg.n);
        let mut nodes: Vec<Node> = NodeId::all(cfg.n)
            .map(|id| Node::new(id, tlc, qsc.clone(), SplitMix64::new(0)))
            .collect();
        for node in &mut nodes {
            node.start(&mut store)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(State { nodes, store })
    }

    fn deliver(&mut self, d: Delivery) -> Result<(), ProtocolError> {
        let rec = self.store.log(d.from)[d.seq as usize].clone();
        self.nodes[d.to.index()].deliver(rec, &mut self.store)?;
        Ok(())
    }

    // The real record a model item stands for.
    fn find(&self, to: usize, item: Item) -> Option<&LogRecord> {
        let from = match item {
            Item::Raw { node, .. } | Item::Cert { node, .. } => node,
            Item::Ack { from, .. } => from,
        };
        let owner_step = self.nodes[to].step();
        let want = |m: &Message| match (item, m) {
            (Item::Raw { step, .. }, Message::Raw(r)) => r.step == step,
            (Item::Cert { step, .. }, Message::Cert(c)) => c.step == step,
            (Item::Ack { of, .. }, Message::Ack(a)) => {
                a.step == owner_step && a.of.node.index() == of
            }
            _ => false,
        };
        self.store
            .log(NodeId(from as u32))
            .iter()
            .find(|rec| want(&rec.msg))
            .map(|rec| rec.as_ref())
    }

    /// Deliver `target` to `to`, preceded by whatever it causally needs,
    /// oldest first.
    fn deliver_with_history(
        &mut self,
        to: usize,
        target: (NodeId, u32),
        schedule: &mut Vec<Delivery>,
    ) -> Option<()> {
        let to_id = NodeId(to as u32);
        let n = self.nodes.len();
        loop {
            let front = self.nodes[to].delivered().clone();
            if front.get(target.0) > target.1 {
                return Some(());
            }
            let rec = self.store.log(target.0)[target.1 as usize].clone();
            let next = if deliverable(&rec, &front) {
                Some(rec.as_ref().clone())
            } else {
                NodeId::all(n)
                    .filter(|&k| k != to_id)
                    .filter_map(|k| self.store.log(k).get(front.get(k) as usize))
                    .find(|r| {
                        let need = if r.node == target.0 {
                            target.1
                        } else {
                            rec.vt.get(r.node)
                        };
                        r.seq < need && deliverable(r, &front)
                    })
                    .map(|r| r.as_ref().clone())
            };
            let next = next?;
            let d = Delivery {
                from: next.node,
                to: to_id,
                seq: next.seq,
            };
            self.deliver(d).ok()?;
            schedule.push(d);
        }
    }

    fn unsafe_round(&self) -> Option<(Round, String)> {
        for committer in &self.nodes {
            for view in committer.qsc().views().filter(|v| v.committed) {
                for other in &self.nodes {
                    if let Some(o) = other.qsc().view(view.round) {
                        if o.best != view.best {
                            return Some((
                                view.round,
                                format!(
                                    "{} committed {} but {} resolved {}",
                                    committer.id(),
                                    view.best,
                                    other.id(),
                                    o.best
                                ),
                            ));
                        }
                    }
                }
            }
        }
        None
    }
}

/// Turn a model path into a real schedule and check that it breaks the
/// real nodes too.
fn concretize(cfg: &ExhaustiveConfig, path: &[Move]) -> Option<Counterexample> {
    let mut state = State::initial(cfg).ok()?;
    let mut schedule = Vec::new();
    for mv in path {
        let rec = state.find(mv.to, mv.item)?;
        let target = (rec.node, rec.seq);
        state.deliver_with_history(mv.to, target, &mut schedule)?;
    }
    let (round, detail) = state.unsafe_round()?;
    Some(Counterexample {
        schedule,
        round,
        detail,
    })
}

/// Explore every delivery order of the compact model and report whether the
/// commit rule is safe in all of them.
pub fn exhaustive_safety(cfg: &ExhaustiveConfig) -> Result<ExhaustiveReport, ConfigError> {
    let (_, qsc) = cfg.node_configs()?;
    let model = Model::new(cfg, qsc);
    let mut report = ExhaustiveReport {
        verdict: Verdict::Safe,
        states: 0,
        terminal_states: 0,
        max_depth: 0,
        spurious: 0,
    };
    let initial = model.initial().map_err(ConfigError::Invalid)?;
    let mut visited: HashSet<Box<[u64]>> = HashSet::new();
    visited.insert(model.key(&initial));
    report.states = 1;
    // Each frame: a state, its untried moves, and the move that led here.
    let moves = model.moves(&initial);
    if moves.is_empty() {
        report.terminal_states += 1;
    }
    let mut stack: Vec<(World, Vec<Move>, Option<Move>)> = vec![(initial, moves, None)];
    loop {
        let depth = stack.len();
        let Some((world, todo, _)) = stack.last_mut() else {
            break;
        };
        report.max_depth = report.max_depth.max(depth - 1);
        let Some(mv) = todo.pop() else {
            stack.pop();
            continue;
        };
        let mut next = world.clone();
        let path = || -> Vec<Move> {
            stack
                .iter()
                .filter_map(|f| f.2)
                .chain(std::iter::once(mv))
                .collect()
        };
        if let Err(e) = model.apply(&mut next, mv) {
            report.verdict = Verdict::Inconclusive {
                reason: format!("model error after {:?}: {e}", path()),
            };
            return Ok(report);
        }
        if !visited.insert(model.key(&next)) {
            continue;
        }
        report.states += 1;
        if model.unsafe_round(&next).is_some() {
            match concretize(cfg, &path()) {
                Some(cx) => {
                    report.verdict = Verdict::Unsafe(cx);
                    return Ok(report);
                }
                None => {
                    report.spurious += 1;
                    continue;
                }
            }
        }
        if report.states >= cfg.state_budget {
            report.verdict = Verdict::Inconclusive {
                reason: format!("state budget of {} exhausted", cfg.state_budget),
            };
            return Ok(report);
        }
        if depth > cfg.depth_bound {
            report.verdict = Verdict::Inconclusive {
                reason: format!("schedule longer than {} deliveries", cfg.depth_bound),
            };
            return Ok(report);
        }
        let moves = model.moves(&next);
        if moves.is_empty() {
            report.terminal_states += 1;
        }
        stack.push((next, moves, Some(mv)));
    }
    if report.spurious > 0 {
        report.verdict = Verdict::Inconclusive {
            reason: format!(
                "{} model counterexamples did not carry over to the real nodes",
                report.spurious
            ),
        };
    }
    Ok(report)
}

/// Per node and round: the best proposer and whether it was committed.
pub type Outcome = Vec<Vec<Option<(NodeId, bool)>>>;

/// Round outcomes of every terminal state of the compact model, or `None`
/// if the state budget runs out first.
pub fn model_outcomes(cfg: &ExhaustiveConfig) -> Result<Option<BTreeSet<Outcome>>, ConfigError> {
    let (_, qsc) = cfg.node_configs()?;
    let model = Model::new(cfg, qsc);
    let initial = model.initial().map_err(ConfigError::Invalid)?;
    let mut visited: HashSet<Box<[u64]>> = HashSet::new();
    let mut out = BTreeSet::new();
    let mut stack = vec![initial];
    while let Some(world) = stack.pop() {
        if !visited.insert(model.key(&world)) {
            continue;
        }
        if visited.len() > cfg.state_budget {
            return Ok(None);
        }
        let moves = model.moves(&world);
        if moves.is_empty() {
            out.insert(
                world
                    .peers
                    .iter()
                    .map(|p| {
                        (0..cfg.rounds)
                            .map(|r| p.decision(r).map(|(b, c)| (NodeId(b as u32), c)))
                            .collect()
                    })
                    .collect(),
            );
        }
        for mv in moves {
            let mut next = world.clone();
            model.apply(&mut next, mv).map_err(ConfigError::Invalid)?;
            stack.push(next);
        }
    }
    Ok(Some(out))
}

/// Run the real nodes under a random order of causally ready deliveries
/// until nothing is left for a node below the last step, and return the
/// round outcomes.
pub fn random_outcome(cfg: &ExhaustiveConfig, seed: u64) -> Result<Outcome, ConfigError> {
    let mut state = State::initial(cfg)?;
    let mut rng = SplitMix64::new(seed);
    loop {
        let mut ready = Vec::new();
        for node in state
            .nodes
            .iter()
            .filter(|n| n.step() < n.tlc().config().max_step)
        {
            for from in NodeId::all(cfg.n).filter(|&f| f != node.id()) {
                let seq = node.delivered().get(from);
                if let Some(rec) = state.store.log(from).get(seq as usize) {
                    if deliverable(rec, node.delivered()) {
                        ready.push(Delivery {
                            from,
                            to: node.id(),
                            seq,
                        });
                    }
                }
            }
        }
        if ready.is_empty() {
            break;
        }
        let d = ready[rng.below(ready.len() as u64) as usize];
        state
            .deliver(d)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    Ok(state
        .nodes
        .iter()
        .map(|node| {
            (0..cfg.rounds)
                .map(|r| node.qsc().view(r).map(|v| (v.best.node, v.committed)))
                .collect()
        })
        .collect())
}

/// Replay a schedule from the initial state and return the final nodes.
/// Every delivery must be causally ready when it is made.
pub fn replay(cfg: &ExhaustiveConfig, schedule: &[Delivery]) -> Result<Vec<Node>, ConfigError> {
    let mut state = State::initial(cfg)?;
    for &d in schedule {
        let ok = state
            .store
            .log(d.from)
            .get(d.seq as usize)
            .is_some_and(|rec| {
                d.from != d.to && deliverable(rec, state.nodes[d.to.index()].delivered())
            });
        if !ok {
            return Err(ConfigError::Invalid(format!("{d:?} is not deliverable")));
        }
        state
            .deliver(d)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    Ok(state.nodes)
}
