//! Structured run traces, written as newline-delimited JSON.
//!
//! Every line carries `e` (its index in the trace) and `kind`. The first
//! line is the run header; the last is `end`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tlc::Via;
use crate::types::{NodeId, RecordId, Round, Step};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("trace has no header line")]
    MissingHeader,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub n: usize,
    pub t_m: usize,
    pub t_w: usize,
    pub self_ack: bool,
    pub f_d: usize,
    pub max_step: Step,
    pub rounds: Round,
    pub pipeline: bool,
    pub encrypt_tickets: bool,
    /// Spoilers counted only up to entry into the round's third step.
    pub strict_horizon: bool,
    pub seed: u64,
    pub adversary: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalInfo {
    pub round: Round,
    pub ticket_commitment: String,
    pub txs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionInfo {
    pub round: Round,
    pub choice: RecordId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub round: i64,
    pub proposer: Option<NodeId>,
    pub hash: String,
    pub parent: String,
    pub txs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingInfo {
    pub from: NodeId,
    pub to: NodeId,
    pub seq: u32,
    /// `None` for envelopes held indefinitely.
    pub deadline: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndStatus {
    /// Nothing left that the network is obliged to deliver.
    Quiescent,
    /// The event budget ran out first.
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    Header(TraceHeader),
    Start {
        node: NodeId,
    },
    Raw {
        from: NodeId,
        seq: u32,
        step: Step,
        vt: Vec<u32>,
        advanced_on: Vec<RecordId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        proposal: Option<ProposalInfo>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        resolutions: Vec<ResolutionInfo>,
    },
    Ack {
        from: NodeId,
        seq: u32,
        step: Step,
        vt: Vec<u32>,
        of: RecordId,
    },
    Cert {
        from: NodeId,
        seq: u32,
        step: Step,
        vt: Vec<u32>,
        of: RecordId,
        ackers: Vec<NodeId>,
    },
    Deliver {
        from: NodeId,
        to: NodeId,
        seq: u32,
        step: Step,
    },
    Advance {
        node: NodeId,
        from_step: Step,
        to_step: Step,
        via: Via,
    },
    Propose {
        round: Round,
        node: NodeId,
        ticket_commitment: String,
    },
    Reveal {
        round: Round,
        node: NodeId,
        ticket: u64,
    },
    Resolve {
        round: Round,
        node: NodeId,
        choice: RecordId,
        confirmed: Vec<RecordId>,
        reconfirmed: Vec<RecordId>,
        seen: Vec<RecordId>,
    },
    Commit {
        round: Round,
        node: NodeId,
        choice: RecordId,
        proposer: NodeId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block_hash: Option<String>,
    },
    Finalize {
        node: NodeId,
        base: String,
        blocks: Vec<BlockInfo>,
        chain_head: String,
    },
    DelaySet {
        set: Vec<NodeId>,
    },
    End {
        status: EndStatus,
        deliveries: u64,
        delay_set: Vec<NodeId>,
        pending: Vec<PendingInfo>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub e: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, body: EventBody) {
        let e = self.events.len() as u64;
        self.events.push(Event { e, body });
    }

    pub fn header(&self) -> Option<&TraceHeader> {
        self.events.iter().find_map(|ev| match &ev.body {
            EventBody::Header(h) => Some(h),
            _ => None,
        })
    }

    pub fn end(&self) -> Option<&Event> {
        self.events
            .iter()
            .rev()
            .find(|ev| matches!(ev.body, EventBody::End { .. }))
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Trace, TraceError> {
        let mut trace = Trace::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                line: i + 1,
                source,
            })?;
            trace.events.push(ev);
        }
        Ok(trace)
    }

    pub fn from_ndjson(text: &str) -> Result<Trace, TraceError> {
        Self::read_ndjson(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip() {
        let mut t = Trace::new();
        t.push(EventBody::Start { node: NodeId(1) });
        t.push(EventBody::Deliver {
            from: NodeId(0),
            to: NodeId(1),
            seq: 3,
            step: 2,
        });
        let text = t.to_ndjson();
        assert!(text.starts_with(r#"{"e":0,"kind":"start","node":1}"#));
        assert_eq!(Trace::from_ndjson(&text).unwrap(), t);
    }
}
