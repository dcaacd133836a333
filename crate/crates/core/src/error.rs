use thiserror::Error;

use crate::sdp::SolveDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("{what} is not positive definite (minimum eigenvalue {min_eig:.3e}, threshold {threshold:.3e})")]
    NotPositiveDefinite {
        what: String,
        min_eig: f64,
        threshold: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown mode {mode} (system has {num_modes} modes)")]
    UnknownMode { mode: usize, num_modes: usize },

    #[error("capacity exceeded: {what} needs {count}, limit is {limit}")]
    Capacity {
        what: String,
        count: u128,
        limit: u128,
    },

    #[error("graph is neither complete nor co-complete; no min/max combiner yields a valid bound")]
    NoValidCombiner,

    #[error("combiner {combiner} requires a {required} graph")]
    CombinerHypothesis {
        combiner: &'static str,
        required: &'static str,
    },

    #[error("order {order} too small for analytic construction (eta = {eta:.6} >= 1)")]
    OrderTooSmall { order: usize, eta: f64 },

    #[error("infeasible: {0}")]
    Infeasible(Box<SolveDiagnostics>),

    #[error("numerical failure: {0}")]
    NumericalFailure(Box<SolveDiagnostics>),

    #[error("ill-conditioned matrix: {0}")]
    IllConditioned(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
