//! Vector clocks, per-node logs, and causally ordered delivery.
//!
//! A vector clock counts records: `vt[k]` is how many of node `k`'s records
//! lie in the history it describes. A record's own clock covers the record
//! itself, so record `seq` of node `i` has `vt[i] == seq + 1`.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::message::Message;
use crate::qsc::Resolution;
use crate::types::{NodeId, RecordId, Round};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CausalError {
    #[error("vector clocks of different widths ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("record {0} arrived twice with different contents")]
    Conflict(RecordId),
    #[error("record {0} is not in the store")]
    Missing(RecordId),
    #[error("record {id} carries vt[{node}]={got}, expected {expected}")]
    BadSelfEntry {
        id: RecordId,
        node: NodeId,
        got: u32,
        expected: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct VectorClock(Vec<u32>);

impl VectorClock {
    pub fn new(n: usize) -> Self {
        VectorClock(vec![0; n])
    }

    pub fn from_vec(v: Vec<u32>) -> Self {
        VectorClock(v)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, node: NodeId) -> u32 {
        self.0[node.index()]
    }

    pub fn increment(&mut self, node: NodeId) -> u32 {
        self.0[node.index()] += 1;
        self.0[node.index()]
    }

    /// Whether the record `id` lies in the history this clock describes.
    pub fn covers(&self, id: RecordId) -> bool {
        id.seq < self.get(id.node)
    }

    fn check_width(&self, other: &VectorClock) -> Result<(), CausalError> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(CausalError::DimensionMismatch {
                left: self.len(),
                right: other.len(),
            })
        }
    }

    /// Componentwise `<=`: every record in `self`'s history is in `other`'s.
    pub fn leq(&self, other: &VectorClock) -> Result<bool, CausalError> {
        self.check_width(other)?;
        Ok(self.0.iter().zip(&other.0).all(|(a, b)| a <= b))
    }

    /// Componentwise max, the clock of the union of both histories.
    pub fn merge(&self, other: &VectorClock) -> Result<VectorClock, CausalError> {
        self.check_width(other)?;
        Ok(VectorClock(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| *a.max(b))
                .collect(),
        ))
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| c as u64).sum()
    }
}

/// One entry in a node's log.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LogRecord {
    pub node: NodeId,
    pub seq: u32,
    pub vt: VectorClock,
    pub msg: Message,
}

impl LogRecord {
    pub fn id(&self) -> RecordId {
        RecordId::new(self.node, self.seq)
    }
}

/// Every record created during a run, indexed by author and sequence number.
///
/// Records are immutable once appended and shared by `Arc`, so a node's
/// knowledge is fully described by its delivered vector clock.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RecordStore {
    logs: Vec<Vec<Arc<LogRecord>>>,
    // (author, round) -> record carrying the author's resolution of `round`.
    resolutions: BTreeMap<(NodeId, Round), RecordId>,
}

impl RecordStore {
    pub fn new(n: usize) -> Self {
        RecordStore {
            logs: vec![Vec::new(); n],
            resolutions: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.logs.len()
    }

    /// Append a record to `node`'s log. `vt` must already count the new
    /// record, i.e. `vt[node]` equals the new log length.
    pub fn append(
        &mut self,
        node: NodeId,
        vt: VectorClock,
        msg: Message,
    ) -> Result<Arc<LogRecord>, CausalError> {
        let log = &self.logs[node.index()];
        let seq = log.len() as u32;
        if vt.get(node) != seq + 1 {
            return Err(CausalError::BadSelfEntry {
                id: RecordId::new(node, seq),
                node,
                got: vt.get(node),
                expected: seq + 1,
            });
        }
        if let Some(raw) = msg.as_raw() {
            for Resolution { round, .. } in &raw.payload.resolutions {
                self.resolutions
                    .insert((node, *round), RecordId::new(node, seq));
            }
        }
        let rec = Arc::new(LogRecord { node, seq, vt, msg });
        self.logs[node.index()].push(rec.clone());
        Ok(rec)
    }

    pub fn get(&self, id: RecordId) -> Option<&Arc<LogRecord>> {
        self.logs.get(id.node.index())?.get(id.seq as usize)
    }

    pub fn fetch(&self, id: RecordId) -> Result<&Arc<LogRecord>, CausalError> {
        self.get(id).ok_or(CausalError::Missing(id))
    }

    pub fn log(&self, node: NodeId) -> &[Arc<LogRecord>] {
        &self.logs[node.index()]
    }

    pub fn len(&self, node: NodeId) -> usize {
        self.logs[node.index()].len()
    }

    /// The record in which `node` published its resolution of `round`.
    pub fn resolution_record(&self, node: NodeId, round: Round) -> Option<RecordId> {
        self.resolutions.get(&(node, round)).copied()
    }
}

/// All records in the history described by `vt`, in per-node log order.
pub fn history_of(
    vt: &VectorClock,
    store: &RecordStore,
) -> Result<Vec<Arc<LogRecord>>, CausalError> {
    if vt.len() != store.n() {
        return Err(CausalError::DimensionMismatch {
            left: vt.len(),
            right: store.n(),
        });
    }
    let mut out = Vec::with_capacity(vt.total() as usize);
    for node in NodeId::all(store.n()) {
        for seq in 0..vt.get(node) {
            let id = RecordId::new(node, seq);
            out.push(store.fetch(id)?.clone());
        }
    }
    Ok(out)
}

/// Whether `rec` can be delivered to a node whose delivered clock is
/// `frontier`: it is the sender's next record and everything it depends on
/// has already been delivered.
pub fn deliverable(rec: &LogRecord, frontier: &VectorClock) -> bool {
    if frontier.get(rec.node) != rec.seq {
        return false;
    }
    rec.vt
        .as_slice()
        .iter()
        .zip(frontier.as_slice())
        .enumerate()
        .all(|(k, (need, have))| k == rec.node.index() || need <= have)
}

/// Per-node buffer that releases records in causal order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Holdback {
    buffer: BTreeMap<RecordId, Arc<LogRecord>>,
}

impl Holdback {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Accept an arriving record and return every record that becomes
    /// deliverable, in delivery order. `frontier` is the receiver's
    /// delivered clock before any of them is delivered.
    ///
    /// Re-delivery of an identical record is ignored; a different record
    /// under the same id is an error.
    pub fn receive(
        &mut self,
        rec: Arc<LogRecord>,
        frontier: &VectorClock,
    ) -> Result<Vec<Arc<LogRecord>>, CausalError> {
        if rec.vt.len() != frontier.len() {
            return Err(CausalError::DimensionMismatch {
                left: rec.vt.len(),
                right: frontier.len(),
            });
        }
        let id = rec.id();
        if frontier.covers(id) {
            return Ok(Vec::new());
        }
        if let Some(held) = self.buffer.get(&id) {
            return if **held == *rec {
                Ok(Vec::new())
            } else {
                Err(CausalError::Conflict(id))
            };
        }
        self.buffer.insert(id, rec);
        let mut frontier = frontier.clone();
        let mut released = Vec::new();
        loop {
            let next = self
                .buffer
                .values()
                .find(|r| deliverable(r, &frontier))
                .map(|r| r.id());
            let Some(next) = next else { break };
            let rec = self.buffer.remove(&next).expect("present");
            frontier.increment(rec.node);
            released.push(rec);
        }
        Ok(released)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Ack, Message};

    fn ack(step: u64) -> Message {
        Message::Ack(Ack {
            step,
            of: RecordId::new(NodeId(0), 0),
        })
    }

    fn rec(node: u32, seq: u32, vt: Vec<u32>) -> Arc<LogRecord> {
        Arc::new(LogRecord {
            node: NodeId(node),
            seq,
            vt: VectorClock::from_vec(vt),
            msg: ack(0),
        })
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let a = VectorClock::new(2);
        let b = VectorClock::new(3);
        assert!(a.leq(&b).is_err());
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn holdback_waits_for_dependencies() {
        let mut hb = Holdback::new();
        let front = VectorClock::new(3);
        // Node 1's record depends on node 0's first record.
        let r1 = rec(1, 0, vec![1, 1, 0]);
        let r0 = rec(0, 0, vec![1, 0, 0]);
        assert!(hb.receive(r1.clone(), &front).unwrap().is_empty());
        let out = hb.receive(r0.clone(), &front).unwrap();
        assert_eq!(out, vec![r0, r1]);
    }

    #[test]
    fn holdback_ignores_duplicates_and_rejects_conflicts() {
        let mut hb = Holdback::new();
        let front = VectorClock::new(2);
        let a = rec(0, 1, vec![2, 0]);
        hb.receive(a.clone(), &front).unwrap();
        assert!(hb.receive(a, &front).unwrap().is_empty());
        let b = Arc::new(LogRecord {
            msg: ack(9),
            ..(*rec(0, 1, vec![2, 0])).clone()
        });
        assert_eq!(
            hb.receive(b, &front),
            Err(CausalError::Conflict(RecordId::new(NodeId(0), 1)))
        );
    }

    #[test]
    fn store_rejects_wrong_self_entry() {
        let mut store = RecordStore::new(2);
        let err = store
            .append(NodeId(0), VectorClock::from_vec(vec![2, 0]), ack(0))
            .unwrap_err();
        assert!(matches!(err, CausalError::BadSelfEntry { .. }));
    }
}
