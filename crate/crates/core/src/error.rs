use thiserror::Error;

use crate::causality::CausalError;
use crate::types::{NodeId, RecordId, Round, Step};

/// Rejected configuration, reported before a run starts.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("need at least one node")]
    NoNodes,
    #[error("message threshold t_m={t_m} must lie in 1..={n}")]
    MessageThreshold { t_m: usize, n: usize },
    #[error("witness threshold t_w={t_w} must lie in 0..={n}")]
    WitnessThreshold { t_w: usize, n: usize },
    #[error("f_d={f_d} must be smaller than n={n}")]
    DelayBudget { f_d: usize, n: usize },
    #[error("delay set of size {size} exceeds f_d={f_d}")]
    DelaySetTooLarge { size: usize, f_d: usize },
    #[error("delay set names node {node} but n={n}")]
    UnknownNode { node: NodeId, n: usize },
    #[error("fixed ticket list has {got} entries, need {n}")]
    TicketCount { got: usize, n: usize },
    #[error("{0}")]
    Invalid(String),
}

/// A node hit a state the protocol rules out. Seeing one means either the
/// harness or an injected mutant broke an invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("node {0} started twice")]
    AlreadyStarted(NodeId),
    #[error("node {node} got a second raw message from {sender} for step {step}")]
    DuplicateRaw {
        node: NodeId,
        sender: NodeId,
        step: Step,
    },
    #[error("node {node} has no confirmed proposal for round {round}")]
    EmptyConfirmed { node: NodeId, round: Round },
    #[error("record {0} is missing from the store")]
    MissingRecord(RecordId),
    #[error(transparent)]
    Causal(#[from] CausalError),
}
