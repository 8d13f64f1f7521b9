//! Finite-state-machine agent orchestration whose workflow topology and
//! per-state instructions evolve through a small algebra of atomic edits.
//!
//! The crate is split along the life of a query:
//!
//! * [`fsm`] defines, validates, serializes and executes a machine.
//! * [`critic`] judges a finished trajectory; [`reflection`] distills an
//!   episode into an experience record.
//! * [`evolution`] proposes, applies and undoes atomic operations under
//!   critic guidance.
//! * [`memory`] persists experience records and warm-starts new machines.
//! * [`backends`] abstracts chat, embedding and tool endpoints, including
//!   scripted and cassette modes for offline runs.
//! * [`harness`] runs single queries, benchmarks, ablations and sweeps.
//! * [`scenarios`] ships scripted worlds that reproduce the reference cases.

pub mod backends;
pub mod critic;
pub mod evolution;
pub mod fsm;
pub mod harness;
pub mod memory;
pub mod reflection;
pub mod scenarios;

pub use backends::{Backends, BackendError, ChatBackend, Embedder, Role, ToolRegistry};
pub use critic::{critique, FailureCode, FailureTag, MechanicalFlag, Verdict};
pub use evolution::{
    apply_op, evolve, propose_ops, undo, AtomicOp, EvolutionOutcome, EvolveLimits, OpEdit,
    OpLogEntry, OpRejectCode, OpRejected,
};
pub use fsm::{
    deserialize_config, run, serialize_config, validate_config, ConditionSpec, FsmConfig,
    ForbiddenPattern, HaltReason, RunLimits, StateDef, StepRecord, Trajectory, TransitionRule,
    ValidationReport,
};
pub use harness::{bench, solve, sweep, BenchmarkItem, Mode, RunReport};
pub use memory::{embed, warm_start, ExperiencePool, RecordFilter, RetrievalResult, WarmStartParams};
pub use reflection::{reflect, ExperienceRecord, Outcome};
