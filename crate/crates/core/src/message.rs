use serde::{Deserialize, Serialize};

use crate::qsc::{Proposal, Resolution};
use crate::types::{NodeId, RecordId, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Raw,
    Ack,
    Cert,
}

/// Application data riding on a raw message.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Payload {
    pub proposal: Option<Proposal>,
    pub resolutions: Vec<Resolution>,
}

/// The first message a node broadcasts at a step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Raw {
    pub step: Step,
    /// The threshold set the sender advanced on to reach `step`
    /// (empty at step 0).
    pub advanced_on: Vec<RecordId>,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ack {
    pub step: Step,
    pub of: RecordId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cert {
    pub step: Step,
    pub of: RecordId,
    pub ackers: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Message {
    Raw(Raw),
    Ack(Ack),
    Cert(Cert),
}

impl Message {
    pub fn step(&self) -> Step {
        match self {
            Message::Raw(m) => m.step,
            Message::Ack(m) => m.step,
            Message::Cert(m) => m.step,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Raw(_) => MessageKind::Raw,
            Message::Ack(_) => MessageKind::Ack,
            Message::Cert(_) => MessageKind::Cert,
        }
    }

    pub fn as_raw(&self) -> Option<&Raw> {
        match self {
            Message::Raw(m) => Some(m),
            _ => None,
        }
    }

    pub fn proposal(&self) -> Option<&Proposal> {
        self.as_raw().and_then(|r| r.payload.proposal.as_ref())
    }
}
