//! Belief-aware policy optimization on a synthetic partially observable
//! container world.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`predicates`]: ternary belief vectors, observability masks, anchor
//!   signatures, and the belief-drift metric.
//! - [`env`]: the deterministic ContainerWorld environment with ground-truth
//!   predicate projection.
//! - [`consistency`]: per-step belief-consistency rewards, the pending buffer
//!   for delayed verification, and retroactive credit assignment.
//! - [`policy`]: a factorized belief+action policy with exact log-probs and
//!   analytic gradients.
//! - [`rollout`]: step records and trajectories shared across the pipeline.
//! - [`advantage`]: step returns, episode-level normalized advantages,
//!   anchor grouping, and step advantages with the singleton rule.
//! - [`optimizer`]: the clipped surrogate objective with KL regularization
//!   and the training iteration.
//! - [`harness`]: experiment configs, multi-seed runs, CSV metrics, JSONL
//!   trajectory logs, and method comparison.

pub mod advantage;
pub mod consistency;
pub mod env;
pub mod harness;
pub mod optimizer;
pub mod policy;
pub mod predicates;
pub mod rollout;

use thiserror::Error;

/// Errors surfaced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed belief: expected length {expected}, got {got}")]
    MalformedBelief { expected: usize, got: usize },

    #[error("malformed input: expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("degenerate rollout group: need at least 2 trajectories, got {0}")]
    DegenerateGroup(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("missing metrics file: {0}")]
    MissingMetrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
