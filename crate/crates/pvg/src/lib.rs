//! An exactly-solvable laboratory for prover-verifier messaging games.
//!
//! The crate builds finite messaging games between provers and verifiers over
//! probabilistic decision problems, computes completeness/soundness errors and
//! zero-knowledge statistical distances exactly by transcript enumeration,
//! enumerates approximate Nash, Stackelberg and correlated-Stackelberg
//! equilibria over finite strategy grids, and runs desk-scale training
//! dynamics (timescale-separated Stackelberg updates with the implicit
//! correction term, LOLA, simultaneous gradients, and tabular expert
//! iteration with a stabilised variant).
//!
//! Supported interaction protocols: `adp`, `nip`, `mnip`, `debate`, `mac`
//! and `zk-nip` (with `zk-mnip` available as the composition of the
//! multi-prover builder and the zero-knowledge wrapper).

pub mod dataset;
pub mod equilibrium;
pub mod game;
pub mod gradients;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod problem;
pub mod protocols;
pub mod strategy;
pub mod suite;
pub mod training;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum PvgError {
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("state-space budget exceeded: {visited} branches (cap {budget})")]
    BudgetExceeded { visited: usize, budget: usize },
    #[error("missing strategy row for observation key `{0}`")]
    MissingKey(String),
    #[error("singular system at the current point: condition estimate {condition:.3e} exceeds {threshold:.1e}")]
    Singular { condition: f64, threshold: f64 },
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PvgError>;
