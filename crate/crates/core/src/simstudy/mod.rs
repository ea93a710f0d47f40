//! Synthetic data generation and Monte Carlo studies.

mod compare;
mod generate;
mod study;

pub use compare::{
    agreement_summary, aic, bic, compare_models_aic_bic, AgreementSummary, Comparison, GroupFit,
    Model, ModelScore,
};
pub use generate::{
    beta_binomial_moments, beta_binomial_pmf, beta_shapes, contaminate, generate_dataset,
    sample_beta_binomial, Misspec, ScenarioConfig,
};
pub use study::{
    run_rmse_study, run_variance_ratio_study, seed_cells, Accuracy, RatioRow, RmseRow, SeMethod,
    StudyOptions, StudyReport,
};
