use thiserror::Error;

/// Errors raised by the tree, LQR and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tree specification: {0}")]
    InvalidTree(String),

    #[error("step {step} out of range 0..={horizon}")]
    StepOutOfRange { step: usize, horizon: usize },

    #[error("input cost R is not positive definite at stage {stage}")]
    SingularInputCost { stage: usize },

    /// `I + P C` could not be factorized while combining `k -> j` with `j -> i`.
    #[error("combination ({k} -> {j} -> {i}) failed: I + P C is singular")]
    SingularCombination { k: usize, j: usize, i: usize },

    /// `R + B^T P B` is not positive definite; the caller should regularize.
    #[error("R + B^T P B is not positive definite at node {node}")]
    IndefiniteHessian { node: usize },

    #[error("condensed Hessian is not positive definite")]
    IndefiniteCondensed,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inconsistent data on shared node {node}: {reason}")]
    InconsistentSharedNode { node: usize, reason: String },

    #[error("non-finite value at node {node}: {what}")]
    NonFinite { node: usize, what: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),
}

pub type Result<T> = std::result::Result<T, Error>;
