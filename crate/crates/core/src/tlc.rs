//! Threshold logical clocks: the per-node step state machine.
//!
//! A node at step `s` broadcasts one raw message, acknowledges every step-`s`
//! raw message it receives while still at `s`, and turns `t_w`
//! acknowledgements of its own raw message into a certificate. It advances
//! to `s + 1` once it holds `t_m` certified step-`s` messages (or `t_m` raw
//! messages when `t_w == 0`). A node that learns of a later step jumps
//! straight to it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::causality::{LogRecord, RecordStore, VectorClock};
use crate::error::{ConfigError, ProtocolError};
use crate::message::{Ack, Cert, Message, Payload, Raw};
use crate::types::{NodeId, RecordId, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TlcConfig {
    pub n: usize,
    pub t_m: usize,
    pub t_w: usize,
    /// Whether a node's own raw message counts toward its `t_w` acks.
    pub self_ack: bool,
    /// Nodes stop advancing once they reach this step. They keep acking and
    /// certifying, so the network still drains.
    pub max_step: Step,
}

impl TlcConfig {
    pub fn new(n: usize, t_m: usize, t_w: usize) -> Result<Self, ConfigError> {
        let cfg = TlcConfig {
            n,
            t_m,
            t_w,
            self_ack: true,
            max_step: Step::MAX,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_step(mut self, max_step: Step) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn with_self_ack(mut self, self_ack: bool) -> Self {
        self.self_ack = self_ack;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::NoNodes);
        }
        if self.t_m == 0 || self.t_m > self.n {
            return Err(ConfigError::MessageThreshold {
                t_m: self.t_m,
                n: self.n,
            });
        }
        if self.t_w > self.n {
            return Err(ConfigError::WitnessThreshold {
                t_w: self.t_w,
                n: self.n,
            });
        }
        Ok(())
    }

    pub fn witnessed(&self) -> bool {
        self.t_w > 0
    }

    /// Both thresholds exceed half the nodes.
    pub fn majoritarian(&self) -> bool {
        2 * self.t_m > self.n && 2 * self.t_w > self.n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Via {
    /// The node collected a threshold of messages for its current step.
    Threshold,
    /// The node saw a message from a later step and caught up to it.
    Viral,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TlcEffect {
    Advanced { from: Step, to: Step, via: Via },
    Emit(Message),
}

/// What the application sees when its node enters a step.
pub struct StepEntry<'a> {
    pub node: &'a TlcNode,
    /// `None` when the node is starting at step 0.
    pub from: Option<Step>,
    pub to: Step,
    pub store: &'a RecordStore,
    /// The node's delivered clock at the moment of entry.
    pub delivered: &'a VectorClock,
}

/// Builds the payload of the raw message a node sends on entering a step.
pub trait StepHook {
    fn enter_step(&mut self, entry: StepEntry<'_>) -> Result<Payload, ProtocolError>;
}

/// A hook that sends empty payloads, for running the clock on its own.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoApp;

impl StepHook for NoApp {
    fn enter_step(&mut self, _: StepEntry<'_>) -> Result<Payload, ProtocolError> {
        Ok(Payload::default())
    }
}

#[derive(Clone, Debug)]
pub struct TlcNode {
    id: NodeId,
    cfg: TlcConfig,
    step: Step,
    started: bool,
    raws_at: BTreeMap<Step, Vec<RecordId>>,
    // Certified raw messages per step, in the order their certs arrived.
    certs_at: BTreeMap<Step, Vec<RecordId>>,
    advanced_on: BTreeMap<Step, Vec<RecordId>>,
    own_raw: Option<RecordId>,
    acks: Vec<NodeId>,
    cert_issued: bool,
    late_acks: u64,
}

impl TlcNode {
    pub fn new(id: NodeId, cfg: TlcConfig) -> Self {
        TlcNode {
            id,
            cfg,
            step: 0,
            started: false,
            raws_at: BTreeMap::new(),
            certs_at: BTreeMap::new(),
            advanced_on: BTreeMap::new(),
            own_raw: None,
            acks: Vec::new(),
            cert_issued: false,
            late_acks: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &TlcConfig {
        &self.cfg
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn raws_at(&self, step: Step) -> &[RecordId] {
        self.raws_at.get(&step).map_or(&[], Vec::as_slice)
    }

    pub fn certs_at(&self, step: Step) -> &[RecordId] {
        self.certs_at.get(&step).map_or(&[], Vec::as_slice)
    }

    /// The threshold set this node used to leave `step`.
    pub fn advanced_on(&self, step: Step) -> Option<&[RecordId]> {
        self.advanced_on.get(&step).map(Vec::as_slice)
    }

    /// Acks for this node's raw messages that arrived after it had moved on.
    pub fn late_acks(&self) -> u64 {
        self.late_acks
    }

    /// Whether delivering `ack` now would count toward a certificate.
    pub fn ack_counts(&self, ack: &Ack) -> bool {
        self.cfg.witnessed()
            && !self.cert_issued
            && Some(ack.of) == self.own_raw
            && ack.step == self.step
    }

    // Everything except the late-ack statistic.
    #[allow(clippy::type_complexity)]
    fn key(
        &self,
    ) -> (
        NodeId,
        &TlcConfig,
        Step,
        bool,
        &BTreeMap<Step, Vec<RecordId>>,
        &BTreeMap<Step, Vec<RecordId>>,
        &BTreeMap<Step, Vec<RecordId>>,
        Option<RecordId>,
        &[NodeId],
        bool,
    ) {
        (
            self.id,
            &self.cfg,
            self.step,
            self.started,
            &self.raws_at,
            &self.certs_at,
            &self.advanced_on,
            self.own_raw,
            &self.acks,
            self.cert_issued,
        )
    }

    pub fn start(
        &mut self,
        store: &RecordStore,
        delivered: &VectorClock,
        hook: &mut dyn StepHook,
    ) -> Result<Vec<TlcEffect>, ProtocolError> {
        if self.started {
            return Err(ProtocolError::AlreadyStarted(self.id));
        }
        self.started = true;
        let payload = hook.enter_step(StepEntry {
            node: self,
            from: None,
            to: 0,
            store,
            delivered,
        })?;
        Ok(vec![TlcEffect::Emit(Message::Raw(Raw {
            step: 0,
            advanced_on: Vec::new(),
            payload,
        }))])
    }

    /// Process one causally delivered record, including this node's own.
    pub fn on_receive(
        &mut self,
        rec: &LogRecord,
        store: &RecordStore,
        delivered: &VectorClock,
        hook: &mut dyn StepHook,
    ) -> Result<Vec<TlcEffect>, ProtocolError> {
        let mut out = Vec::new();
        let id = rec.id();
        match &rec.msg {
            Message::Raw(raw) => {
                let s = raw.step;
                let list = self.raws_at.entry(s).or_default();
                if list.iter().any(|r| r.node == rec.node) {
                    return Err(ProtocolError::DuplicateRaw {
                        node: self.id,
                        sender: rec.node,
                        step: s,
                    });
                }
                list.push(id);
                if rec.node == self.id {
                    if s == self.step {
                        self.own_raw = Some(id);
                        self.acks.clear();
                        self.cert_issued = false;
                        if self.cfg.self_ack && self.cfg.witnessed() {
                            self.acks.push(self.id);
                        }
                        self.maybe_certify(&mut out);
                    }
                } else {
                    if s > self.step {
                        self.catch_up(s, store, delivered, hook, &mut out)?;
                    }
                    if s == self.step && self.cfg.witnessed() {
                        out.push(TlcEffect::Emit(Message::Ack(Ack { step: s, of: id })));
                    }
                }
            }
            Message::Ack(ack) => {
                if ack.of.node == self.id {
                    if Some(ack.of) == self.own_raw && ack.step == self.step {
                        if !self.acks.contains(&rec.node) {
                            self.acks.push(rec.node);
                        }
                        self.maybe_certify(&mut out);
                    } else {
                        self.late_acks += 1;
                    }
                }
            }
            Message::Cert(cert) => {
                let list = self.certs_at.entry(cert.step).or_default();
                if !list.contains(&cert.of) {
                    list.push(cert.of);
                }
                if cert.step > self.step {
                    self.catch_up(cert.step, store, delivered, hook, &mut out)?;
                }
            }
        }
        self.advance_check(store, delivered, hook, &mut out)?;
        Ok(out)
    }

    fn maybe_certify(&mut self, out: &mut Vec<TlcEffect>) {
        let Some(own) = self.own_raw else { return };
        if self.cert_issued || !self.cfg.witnessed() || self.acks.len() < self.cfg.t_w {
            return;
        }
        self.cert_issued = true;
        let mut ackers = self.acks.clone();
        ackers.sort();
        out.push(TlcEffect::Emit(Message::Cert(Cert {
            step: self.step,
            of: own,
            ackers,
        })));
    }

    fn threshold_set(&self, step: Step) -> Vec<RecordId> {
        let source = if self.cfg.witnessed() {
            self.certs_at(step)
        } else {
            self.raws_at(step)
        };
        source.iter().take(self.cfg.t_m).copied().collect()
    }

    fn advance_check(
        &mut self,
        store: &RecordStore,
        delivered: &VectorClock,
        hook: &mut dyn StepHook,
        out: &mut Vec<TlcEffect>,
    ) -> Result<(), ProtocolError> {
        while self.started && self.step < self.cfg.max_step {
            let basis = self.threshold_set(self.step);
            if basis.len() < self.cfg.t_m {
                break;
            }
            self.advanced_on.insert(self.step, basis);
            self.enter(self.step + 1, Via::Threshold, store, delivered, hook, out)?;
        }
        Ok(())
    }

    fn catch_up(
        &mut self,
        target: Step,
        store: &RecordStore,
        delivered: &VectorClock,
        hook: &mut dyn StepHook,
        out: &mut Vec<TlcEffect>,
    ) -> Result<(), ProtocolError> {
        let target = target.min(self.cfg.max_step);
        if target <= self.step {
            return Ok(());
        }
        // Causal delivery guarantees the evidence the sender advanced on is
        // already here.
        let basis = self.threshold_set(target - 1);
        self.advanced_on.insert(target - 1, basis);
        self.enter(target, Via::Viral, store, delivered, hook, out)
    }

    fn enter(
        &mut self,
        to: Step,
        via: Via,
        store: &RecordStore,
        delivered: &VectorClock,
        hook: &mut dyn StepHook,
        out: &mut Vec<TlcEffect>,
    ) -> Result<(), ProtocolError> {
        let from = self.step;
        self.step = to;
        self.own_raw = None;
        self.acks.clear();
        self.cert_issued = false;
        out.push(TlcEffect::Advanced { from, to, via });
        let payload = hook.enter_step(StepEntry {
            node: self,
            from: Some(from),
            to,
            store,
            delivered,
        })?;
        let advanced_on = self.advanced_on.get(&(to - 1)).cloned().unwrap_or_default();
        out.push(TlcEffect::Emit(Message::Raw(Raw {
            step: to,
            advanced_on,
            payload,
        })));
        Ok(())
    }
}

// Two nodes that differ only in how many late acks they counted behave
// identically from here on.
impl PartialEq for TlcNode {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for TlcNode {}

impl std::hash::Hash for TlcNode {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}
