//! Threshold logical clocks with randomized consensus on top, plus the
//! network simulator, trace checkers and model checker used to test them.

pub mod causality;
pub mod check;
pub mod error;
pub mod message;
pub mod node;
pub mod qsc;
pub mod rng;
pub mod sim;
pub mod tlc;
pub mod trace;
pub mod types;

pub use causality::{history_of, CausalError, Holdback, LogRecord, RecordStore, VectorClock};
pub use error::{ConfigError, ProtocolError};
pub use message::{Message, MessageKind};
pub use qsc::{CommitRule, QscConfig, SpoilerHorizon, Ticket, TicketSource};
pub use rng::SplitMix64;
pub use sim::{run, AdversaryKind, DelaySchedule, RunConfig, SimConfig, SimError, SimOutcome};
pub use tlc::{TlcConfig, Via};
pub use trace::{EndStatus, Event, EventBody, Trace, TraceHeader};
pub use types::{NodeId, RecordId, Round, Step};
