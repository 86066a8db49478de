use std::collections::VecDeque;

use tlcqsc::message::{Ack, Cert, Message, Raw};
use tlcqsc::tlc::{NoApp, TlcEffect, TlcNode};
use tlcqsc::{NodeId, RecordId, RecordStore, TlcConfig, VectorClock, Via};

/// One clock node fed hand-made records from its peers. Its own emissions
/// are appended to the store and delivered back to it, as the simulator does.
struct Harness {
    node: TlcNode,
    store: RecordStore,
    delivered: VectorClock,
    emitted: Vec<Message>,
    advances: Vec<(u64, u64, Via)>,
}

impl Harness {
    fn new(n: usize, t_m: usize, t_w: usize) -> Self {
        let cfg = TlcConfig::new(n, t_m, t_w).unwrap().with_max_step(100);
        Harness {
            node: TlcNode::new(NodeId(0), cfg),
            store: RecordStore::new(n),
            delivered: VectorClock::new(n),
            emitted: Vec::new(),
            advances: Vec::new(),
        }
    }

    fn started(n: usize, t_m: usize, t_w: usize) -> Self {
        let mut h = Self::new(n, t_m, t_w);
        let effects = h.node.start(&h.store, &h.delivered, &mut NoApp).unwrap();
        h.absorb(effects);
        h
    }

    fn absorb(&mut self, effects: Vec<TlcEffect>) {
        let mut queue = VecDeque::from(effects);
        while let Some(e) = queue.pop_front() {
            match e {
                TlcEffect::Advanced { from, to, via } => self.advances.push((from, to, via)),
                TlcEffect::Emit(msg) => {
                    self.emitted.push(msg.clone());
                    self.delivered.increment(NodeId(0));
                    let rec = self
                        .store
                        .append(NodeId(0), self.delivered.clone(), msg)
                        .unwrap();
                    let more = self
                        .node
                        .on_receive(&rec, &self.store, &self.delivered, &mut NoApp)
                        .unwrap();
                    queue.extend(more);
                }
            }
        }
    }

    /// Deliver a message written by peer `from`; returns its id.
    fn feed(&mut self, from: u32, msg: Message) -> RecordId {
        let from = NodeId(from);
        let mut vt = VectorClock::new(self.store.n());
        for _ in 0..=self.store.len(from) {
            vt.increment(from);
        }
        let rec = self.store.append(from, vt, msg).unwrap();
        self.delivered.increment(from);
        let effects = self
            .node
            .on_receive(&rec, &self.store, &self.delivered, &mut NoApp)
            .unwrap();
        self.emitted.clear();
        self.advances.clear();
        self.absorb(effects);
        rec.id()
    }

    fn raws(&self) -> Vec<u64> {
        self.emitted
            .iter()
            .filter_map(|m| m.as_raw().map(|r| r.step))
            .collect()
    }

    fn acks(&self) -> usize {
        self.emitted
            .iter()
            .filter(|m| matches!(m, Message::Ack(_)))
            .count()
    }
}

fn raw(step: u64) -> Message {
    Message::Raw(Raw {
        step,
        advanced_on: Vec::new(),
        payload: Default::default(),
    })
}

fn cert(step: u64, of: RecordId) -> Message {
    Message::Cert(Cert {
        step,
        of,
        ackers: vec![NodeId(0), of.node],
    })
}

#[test]
fn fresh_node_sends_raw_zero() {
    let h = Harness::started(3, 2, 2);
    assert_eq!(h.raws(), vec![0]);
    assert_eq!(h.node.step(), 0);
}

#[test]
fn single_node_advances_on_its_own_raws() {
    let cfg = TlcConfig::new(1, 1, 0).unwrap().with_max_step(4);
    let mut h = Harness::new(1, 1, 0);
    h.node = TlcNode::new(NodeId(0), cfg);
    let effects = h.node.start(&h.store, &h.delivered, &mut NoApp).unwrap();
    h.absorb(effects);
    assert_eq!(h.node.step(), 4);
    assert_eq!(h.raws(), vec![0, 1, 2, 3, 4]);
    assert!(h.advances.iter().all(|a| a.2 == Via::Threshold));
}

#[test]
fn unwitnessed_threshold_advance() {
    let mut h = Harness::started(3, 2, 0);
    h.feed(1, raw(0));
    assert_eq!(h.node.step(), 1);
    assert_eq!(h.raws(), vec![1]);
    assert_eq!(h.acks(), 0);
}

#[test]
fn witnessed_round_trip_yields_cert() {
    let mut h = Harness::started(3, 2, 2);
    let own = h.node.raws_at(0)[0];
    h.feed(1, Message::Ack(Ack { step: 0, of: own }));
    let certs: Vec<_> = h
        .emitted
        .iter()
        .filter_map(|m| match m {
            Message::Cert(c) => Some(c.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(certs.len(), 1);
    assert_eq!(certs[0].of, own);
    assert_eq!(certs[0].ackers, vec![NodeId(0), NodeId(1)]);
    // One cert is below t_m = 2.
    assert_eq!(h.node.step(), 0);
}

#[test]
fn current_step_raw_is_acked() {
    let mut h = Harness::started(3, 2, 2);
    h.feed(1, raw(0));
    assert_eq!(h.acks(), 1);
    assert_eq!(h.node.step(), 0);
    assert!(h.raws().is_empty());
}

#[test]
fn stale_raw_gets_no_ack() {
    let mut h = Harness::started(3, 2, 2);
    h.feed(1, raw(3));
    assert_eq!(h.node.step(), 3);
    h.feed(2, raw(1));
    assert_eq!(h.acks(), 0);
    assert!(h.raws().is_empty());
    assert_eq!(h.node.step(), 3);
}

#[test]
fn viral_jump_to_three() {
    let mut h = Harness::started(3, 2, 2);
    h.feed(1, raw(3));
    assert_eq!(h.raws(), vec![3]);
    assert_eq!(h.advances, vec![(0, 3, Via::Viral)]);
}

#[test]
fn same_step_raw_is_not_a_jump() {
    let mut h = Harness::started(3, 2, 2);
    h.feed(1, raw(2));
    h.feed(2, raw(2));
    assert_eq!(h.node.step(), 2);
    assert!(h.raws().is_empty());
    assert!(h.advances.is_empty());
}

#[test]
fn chained_jumps_skip_intervening_steps() {
    let mut h = Harness::started(3, 2, 2);
    let mut raws = Vec::new();
    h.feed(1, raw(2));
    raws.extend(h.raws());
    h.feed(2, raw(5));
    raws.extend(h.raws());
    assert_eq!(raws, vec![2, 5]);
    assert_eq!(h.node.step(), 5);
    for s in [1, 3, 4] {
        assert!(h.node.raws_at(s).iter().all(|r| r.node != NodeId(0)));
    }
}

#[test]
fn cert_from_the_future_triggers_catch_up() {
    let mut h = Harness::started(3, 2, 2);
    h.feed(1, raw(1));
    assert_eq!(h.node.step(), 1);
    h.feed(2, cert(4, RecordId::new(NodeId(2), 0)));
    assert_eq!(h.node.step(), 4);
    assert_eq!(h.advances, vec![(1, 4, Via::Viral)]);
    assert_eq!(h.raws(), vec![4]);
}

#[test]
fn one_cert_short_of_threshold_does_nothing() {
    let mut h = Harness::started(3, 2, 2);
    let b = h.feed(1, raw(0));
    h.feed(1, cert(0, b));
    assert!(h.advances.is_empty());
    assert_eq!(h.node.step(), 0);
}

#[test]
fn advances_on_other_nodes_certs_alone() {
    let mut h = Harness::started(3, 2, 2);
    let b = h.feed(1, raw(0));
    let c = h.feed(2, raw(0));
    h.feed(1, cert(0, b));
    h.feed(2, cert(0, c));
    assert_eq!(h.node.step(), 1);
    assert_eq!(h.advances, vec![(0, 1, Via::Threshold)]);
    assert_eq!(h.node.advanced_on(0).unwrap(), &[b, c]);
    let own = h
        .node
        .raws_at(0)
        .iter()
        .find(|r| r.node == NodeId(0))
        .copied();
    assert!(!h.node.certs_at(0).contains(&own.unwrap()));
}

#[test]
fn acks_for_an_abandoned_raw_are_late() {
    let mut h = Harness::started(3, 2, 2);
    let own = h.node.raws_at(0)[0];
    h.feed(1, raw(2));
    h.feed(2, Message::Ack(Ack { step: 0, of: own }));
    assert_eq!(h.node.late_acks(), 1);
    assert!(h.emitted.is_empty());
}
