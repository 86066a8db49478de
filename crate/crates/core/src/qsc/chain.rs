//! Blocks and per-node finalized chains.
//!
//! A round's winning proposal becomes a block whose parent is the block its
//! proposer itself chose for the previous round. A node finalizes a block
//! once it has committed the round and has seen every resolution along the
//! lineage back to its current head.

use std::collections::{HashMap, HashSet};

use sha2::{Digest as _, Sha256};

use crate::causality::{RecordStore, VectorClock};
use crate::error::ProtocolError;
use crate::qsc::{Proposal, Tx};
use crate::types::{NodeId, RecordId, Round};

pub type Digest = [u8; 32];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub parent: Digest,
    /// -1 for genesis.
    pub round: i64,
    pub proposer: Option<NodeId>,
    pub txs: Vec<Tx>,
    pub hash: Digest,
}

impl Block {
    pub fn new(parent: Digest, round: i64, proposer: Option<NodeId>, txs: Vec<Tx>) -> Block {
        let mut block = Block {
            parent,
            round,
            proposer,
            txs,
            hash: [0; 32],
        };
        block.hash = block.compute_hash();
        block
    }

    pub fn genesis() -> Block {
        Block::new([0; 32], -1, None, Vec::new())
    }

    /// Canonical big-endian encoding that the hash is taken over.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 + 5 + 4 + 16 * self.txs.len());
        out.extend_from_slice(&self.parent);
        out.extend_from_slice(&self.round.to_be_bytes());
        match self.proposer {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                out.extend_from_slice(&p.0.to_be_bytes());
            }
        }
        out.extend_from_slice(&(self.txs.len() as u32).to_be_bytes());
        for tx in &self.txs {
            out.extend_from_slice(&tx.id.to_be_bytes());
            out.extend_from_slice(&tx.coin.to_be_bytes());
        }
        out
    }

    pub fn compute_hash(&self) -> Digest {
        Sha256::digest(self.encode()).into()
    }
}

/// Content-addressed store of every block formed during a run. Blocks are a
/// pure function of their proposal and lineage, so nodes share them.
#[derive(Clone, Debug)]
pub struct BlockStore {
    blocks: HashMap<Digest, Block>,
    by_proposal: HashMap<RecordId, Digest>,
    genesis: Digest,
}

impl Default for BlockStore {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockStore {
    pub fn new() -> Self {
        let genesis = Block::genesis();
        let hash = genesis.hash;
        BlockStore {
            blocks: HashMap::from([(hash, genesis)]),
            by_proposal: HashMap::new(),
            genesis: hash,
        }
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn get(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn block_for(&self, proposal: RecordId) -> Option<&Block> {
        self.by_proposal
            .get(&proposal)
            .and_then(|h| self.blocks.get(h))
    }

    fn spent_coins(&self, mut at: Digest) -> HashSet<u64> {
        let mut spent = HashSet::new();
        while let Some(block) = self.blocks.get(&at) {
            spent.extend(block.txs.iter().map(|tx| tx.coin));
            if block.round < 0 {
                break;
            }
            at = block.parent;
        }
        spent
    }

    /// The block for `proposal` on top of `parent`. Transactions spending a
    /// coin already spent by an ancestor, or earlier in the same block, are
    /// dropped. Deterministic and memoized per (proposal, parent).
    pub fn form_block(&mut self, id: RecordId, proposal: &Proposal, parent: Digest) -> Digest {
        if let Some(h) = self.by_proposal.get(&id) {
            if self.blocks[h].parent == parent {
                return *h;
            }
        }
        let mut spent = self.spent_coins(parent);
        let txs = proposal
            .txs
            .iter()
            .copied()
            .filter(|tx| spent.insert(tx.coin))
            .collect();
        let block = Block::new(parent, proposal.round as i64, Some(proposal.proposer), txs);
        let hash = block.hash;
        self.blocks.insert(hash, block);
        self.by_proposal.entry(id).or_insert(hash);
        hash
    }
}

/// Blocks a node newly finalized, extending the chain that ended at `base`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finalized {
    pub base: Digest,
    pub blocks: Vec<Block>,
    pub head: Digest,
}

#[derive(Clone, Debug, Default)]
pub struct ChainState {
    // finalized[r] is the proposal and block this node finalized for round r.
    finalized: Vec<(RecordId, Digest)>,
    target: Option<(Round, RecordId)>,
}

impl ChainState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.finalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.finalized.is_empty()
    }

    pub fn head(&self, store: &BlockStore) -> Digest {
        self.finalized.last().map_or(store.genesis(), |(_, h)| *h)
    }

    pub fn finalized(&self) -> &[(RecordId, Digest)] {
        &self.finalized
    }

    pub fn pending(&self) -> bool {
        self.target.is_some()
    }

    /// Record that the node committed `choice` in `round`.
    pub fn commit(&mut self, round: Round, choice: RecordId) {
        if (round as usize) < self.finalized.len() {
            return;
        }
        if self.target.is_none_or(|(r, _)| round > r) {
            self.target = Some((round, choice));
        }
    }

    /// Finalize the committed target if the node knows its full lineage.
    pub fn try_finalize(
        &mut self,
        delivered: &VectorClock,
        records: &RecordStore,
        blocks: &mut BlockStore,
    ) -> Result<Option<Finalized>, ProtocolError> {
        let Some((round, choice)) = self.target else {
            return Ok(None);
        };
        let proposal_of = |id: RecordId| -> Result<&Proposal, ProtocolError> {
            records
                .fetch(id)?
                .msg
                .proposal()
                .ok_or(ProtocolError::MissingRecord(id))
        };
        let mut path = Vec::new();
        let mut cur = choice;
        let mut r = round;
        let anchor = loop {
            if let Some(&(fid, fhash)) = self.finalized.get(r as usize) {
                if fid == cur {
                    break fhash;
                }
            }
            path.push((r, cur));
            if r == 0 {
                break blocks.genesis();
            }
            let Some(res) = records.resolution_record(cur.node, r - 1) else {
                return Ok(None);
            };
            if !delivered.covers(res) {
                return Ok(None);
            }
            let raw = records
                .fetch(res)?
                .msg
                .as_raw()
                .expect("resolutions ride on raws");
            cur = raw
                .payload
                .resolutions
                .iter()
                .find(|x| x.round == r - 1)
                .map(|x| x.choice)
                .expect("indexed resolution");
            r -= 1;
        };
        let prev_len = self.finalized.len();
        let mut parent = anchor;
        let mut base = if prev_len == 0 {
            blocks.genesis()
        } else {
            anchor
        };
        let mut new_blocks = Vec::new();
        for &(r, id) in path.iter().rev() {
            let hash = blocks.form_block(id, proposal_of(id)?, parent);
            let idx = r as usize;
            if idx + 1 == prev_len {
                base = hash;
            }
            if idx < self.finalized.len() {
                self.finalized[idx] = (id, hash);
            } else {
                self.finalized.push((id, hash));
            }
            if idx >= prev_len {
                new_blocks.push(blocks.get(&hash).expect("just formed").clone());
            }
            parent = hash;
        }
        self.target = None;
        Ok(Some(Finalized {
            base,
            blocks: new_blocks,
            head: parent,
        }))
    }
}
