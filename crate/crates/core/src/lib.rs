//! Estimation and inference for the binomial convolution measurement-error
//! model of bounded counts.
//!
//! A true count `X` of successes out of `N` trials is recorded with error as
//! `Y = TP + FP`, where true successes are retained with probability
//! `pi_tp` and true failures are misrecorded as successes with probability
//! `1 - pi_tn`. Given paired `(X, Y)` data the crate estimates the accuracy
//! rates by maximum likelihood ([`mle`]), least squares ([`regression`]) and
//! the generalized method of moments ([`gmm`]), attaches plug-in or
//! resampling standard errors ([`bootstrap`]), and runs Monte Carlo studies
//! of the estimators ([`simstudy`]).

pub mod bootstrap;
pub mod error;
pub mod estimator;
pub mod gmm;
pub mod mle;
pub mod model;
pub mod optim;
pub mod regression;
pub mod rng;
pub mod simstudy;

pub use error::{Error, Result};
pub use estimator::Estimator;
pub use model::{MomentSummary, PairedDataset, PairedObs, RateParams};

/// Library version, recorded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
