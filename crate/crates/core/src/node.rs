//! A full protocol node: clock, consensus, and what it has delivered.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::causality::{deliverable, CausalError, LogRecord, RecordStore, VectorClock};
use crate::error::ProtocolError;
use crate::qsc::{QscConfig, QscEvent, QscNode, RoundView};
use crate::rng::SplitMix64;
use crate::tlc::{TlcConfig, TlcEffect, TlcNode, Via};
use crate::types::{NodeId, Step};

/// Something observable a node did, in the order it happened.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeEvent {
    /// A record from another node was delivered.
    Delivered(Arc<LogRecord>),
    /// The node appended a record to its log and will broadcast it.
    Emitted(Arc<LogRecord>),
    Advanced {
        from: Step,
        to: Step,
        via: Via,
    },
    Resolved(RoundView),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    id: NodeId,
    tlc: TlcNode,
    qsc: QscNode,
    delivered: VectorClock,
}

impl Node {
    pub fn new(id: NodeId, tlc: TlcConfig, qsc: Arc<QscConfig>, rng: SplitMix64) -> Self {
        Node {
            id,
            tlc: TlcNode::new(id, tlc),
            qsc: QscNode::new(id, qsc, rng),
            delivered: VectorClock::new(tlc.n),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tlc(&self) -> &TlcNode {
        &self.tlc
    }

    pub fn qsc(&self) -> &QscNode {
        &self.qsc
    }

    pub fn step(&self) -> Step {
        self.tlc.step()
    }

    /// Clock of everything this node has delivered or written.
    pub fn delivered(&self) -> &VectorClock {
        &self.delivered
    }

    pub fn start(&mut self, store: &mut RecordStore) -> Result<Vec<NodeEvent>, ProtocolError> {
        let effects = self.tlc.start(store, &self.delivered, &mut self.qsc)?;
        let mut events = Vec::new();
        self.run(effects, store, &mut events)?;
        Ok(events)
    }

    /// Deliver a record from another node. The record must be causally
    /// ready at this node.
    pub fn deliver(
        &mut self,
        rec: Arc<LogRecord>,
        store: &mut RecordStore,
    ) -> Result<Vec<NodeEvent>, ProtocolError> {
        if !deliverable(&rec, &self.delivered) || rec.node == self.id {
            return Err(CausalError::Missing(rec.id()).into());
        }
        self.delivered.increment(rec.node);
        let mut events = vec![NodeEvent::Delivered(rec.clone())];
        let effects = self
            .tlc
            .on_receive(&rec, store, &self.delivered, &mut self.qsc)?;
        self.run(effects, store, &mut events)?;
        Ok(events)
    }

    fn run(
        &mut self,
        effects: Vec<TlcEffect>,
        store: &mut RecordStore,
        events: &mut Vec<NodeEvent>,
    ) -> Result<(), ProtocolError> {
        let mut queue = VecDeque::new();
        self.apply(effects, store, &mut queue, events)?;
        // Own records are processed in emission order, as if delivered to
        // ourselves immediately.
        while let Some(rec) = queue.pop_front() {
            let effects = self
                .tlc
                .on_receive(&rec, store, &self.delivered, &mut self.qsc)?;
            self.apply(effects, store, &mut queue, events)?;
        }
        Ok(())
    }

    fn apply(
        &mut self,
        effects: Vec<TlcEffect>,
        store: &mut RecordStore,
        queue: &mut VecDeque<Arc<LogRecord>>,
        events: &mut Vec<NodeEvent>,
    ) -> Result<(), ProtocolError> {
        let mut resolved: Vec<QscEvent> = self.qsc.take_events();
        for effect in effects {
            match effect {
                TlcEffect::Advanced { from, to, via } => {
                    events.push(NodeEvent::Advanced { from, to, via });
                    let (now, later): (Vec<_>, Vec<_>) =
                        resolved.into_iter().partition(|e| e.at_step == to);
                    events.extend(now.into_iter().map(|e| NodeEvent::Resolved(e.view)));
                    resolved = later;
                }
                TlcEffect::Emit(msg) => {
                    self.delivered.increment(self.id);
                    let rec = store.append(self.id, self.delivered.clone(), msg)?;
                    events.push(NodeEvent::Emitted(rec.clone()));
                    queue.push_back(rec);
                }
            }
        }
        debug_assert!(resolved.is_empty());
        Ok(())
    }
}
