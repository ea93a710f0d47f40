use thiserror::Error;

/// Errors produced by the model, the estimators and the study harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("all observations must share one trial count (found {0} and {1})")]
    HeterogeneousTrials(u32, u32),

    #[error("sample variance of the true counts is zero")]
    ZeroVariance,

    #[error("numerical instability: {0}")]
    Numerical(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("estimator did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("profile bisection failed on [{lo}, {hi}]: {reason}")]
    Bisection { lo: f64, hi: f64, reason: String },

    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
