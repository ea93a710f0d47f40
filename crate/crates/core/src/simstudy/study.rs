use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_se_from, BootstrapPlan, MRule, Scheme, DEFAULT_SIM_REPLICATES};
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::rng::{derive_seed, substream};

use super::generate::{generate_dataset, ScenarioConfig};

/// Standard-error method evaluated in the variance-ratio study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMethod {
    PlugIn,
    SemiParametric,
    Nonparametric,
    MOutOfN(MRule),
}

impl SeMethod {
    pub const STUDY_DEFAULT: [SeMethod; 5] = [
        SeMethod::PlugIn,
        SeMethod::SemiParametric,
        SeMethod::Nonparametric,
        SeMethod::MOutOfN(MRule::TwoSqrtN),
        SeMethod::MOutOfN(MRule::TwoThirdsN),
    ];

    fn plan(&self, replicates: usize, seed: u64) -> Option<BootstrapPlan> {
        match *self {
            SeMethod::PlugIn => None,
            SeMethod::SemiParametric => {
                Some(BootstrapPlan::new(Scheme::SemiParametric, replicates, seed))
            }
            SeMethod::Nonparametric => {
                Some(BootstrapPlan::new(Scheme::Nonparametric, replicates, seed))
            }
            SeMethod::MOutOfN(rule) => {
                Some(BootstrapPlan::new(Scheme::MOutOfN, replicates, seed).with_m_rule(rule))
            }
        }
    }
}

impl fmt::Display for SeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeMethod::PlugIn => f.write_str("plugin"),
            SeMethod::SemiParametric => f.write_str("semipar"),
            SeMethod::Nonparametric => f.write_str("boot"),
            SeMethod::MOutOfN(r) => write!(f, "moon-{r}"),
        }
    }
}

impl FromStr for SeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(SeMethod::PlugIn),
            "semipar" => Ok(SeMethod::SemiParametric),
            "boot" => Ok(SeMethod::Nonparametric),
            "moon" => Ok(SeMethod::MOutOfN(MRule::TwoSqrtN)),
            other => match other.strip_prefix("moon-") {
                Some(rule) => Ok(SeMethod::MOutOfN(rule.parse()?)),
                None => Err(Error::Config(format!("unknown SE method '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Bootstrap replicates per standard-error estimate.
    pub bootstrap_replicates: usize,
    /// Spread cells and replications over the rayon pool. Results do not
    /// depend on it.
    pub parallel: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            bootstrap_replicates: DEFAULT_SIM_REPLICATES,
            parallel: true,
        }
    }
}

/// Monte Carlo accuracy of one estimator in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    // cell design
    pub cell: usize,
    pub n: usize,
    pub n_trials: u32,
    pub p: f64,
    pub rho_x: f64,
    pub pi_tp: f64,
    pub pi_tn: f64,
    pub misspec: String,
    pub misspec_rho: f64,
    pub replications: usize,
    pub seed: u64,
    pub estimator: String,
    pub successes: usize,
    pub failures: usize,
    pub mean_tp: f64,
    pub mean_tn: f64,
    pub bias_tp: f64,
    pub bias_tn: f64,
    pub var_tp: f64,
    pub var_tn: f64,
    pub rmse_tp: f64,
    pub rmse_tn: f64,
}

/// Average estimated variance over Monte Carlo variance for one
/// estimator and standard-error method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    // cell design
    pub cell: usize,
    pub n: usize,
    pub n_trials: u32,
    pub p: f64,
    pub rho_x: f64,
    pub pi_tp: f64,
    pub pi_tn: f64,
    pub misspec: String,
    pub misspec_rho: f64,
    pub replications: usize,
    pub seed: u64,
    pub estimator: String,
    pub method: String,
    /// Replications where the point estimate succeeded.
    pub fits: usize,
    /// Replications where the variance estimate also succeeded.
    pub estimates: usize,
    pub mc_var_tp: f64,
    pub mc_var_tn: f64,
    pub avg_var_tp: f64,
    pub avg_var_tn: f64,
    pub ratio_tp: f64,
    pub ratio_tn: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyReport {
    pub rmse: Vec<RmseRow>,
    pub ratios: Vec<RatioRow>,
}

/// Bias, variance (divisor `R`) and RMSE of point estimates against `truth`.
/// `rmse^2 = bias^2 + var` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub mean: f64,
    pub bias: f64,
    pub var: f64,
    pub rmse: f64,
}

impl Accuracy {
    pub fn from_estimates(truth: f64, estimates: &[f64]) -> Self {
        if estimates.is_empty() {
            return Self {
                mean: f64::NAN,
                bias: f64::NAN,
                var: f64::NAN,
                rmse: f64::NAN,
            };
        }
        let r = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / r;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / r;
        let bias = mean - truth;
        Self {
            mean,
            bias,
            var,
            rmse: (bias * bias + var).sqrt(),
        }
    }
}

/// Variance with divisor `R - 1`.
fn mc_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn validate_grid(grid: &[ScenarioConfig], estimators: &[Estimator]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty scenario grid".into()));
    }
    if estimators.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    for (i, c) in grid.iter().enumerate() {
        c.validate()
            .map_err(|e| Error::Config(format!("cell {i}: {e}")))?;
    }
    Ok(())
}

/// Assigns every cell the seed derived from `(study_seed, cell index)`.
pub fn seed_cells(grid: &mut [ScenarioConfig], study_seed: u64) {
    for (i, c) in grid.iter_mut().enumerate() {
        c.seed = derive_seed(study_seed, &[i as u64]);
    }
}

/// Runs `job` on every `(cell, replicate)` pair, returning results grouped
/// by cell in replicate order.
fn run_replications<T, F>(grid: &[ScenarioConfig], parallel: bool, job: F) -> Vec<Vec<T>>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    let pairs: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    let flat: Vec<T> = if parallel {
        pairs.par_iter().map(|&(c, r)| job(c, r)).collect()
    } else {
        pairs.iter().map(|&(c, r)| job(c, r)).collect()
    };
    let mut out: Vec<Vec<T>> = grid
        .iter()
        .map(|c| Vec::with_capacity(c.replications))
        .collect();
    for ((c, _), v) in pairs.into_iter().zip(flat) {
        out[c].push(v);
    }
    out
}

/// Bias, Monte Carlo variance and RMSE of each estimator in each cell.
/// Replicate `r` of a cell uses the substream `(cell.seed, r)`; failed fits
/// are excluded and counted.
pub fn run_rmse_study(
    grid: &[ScenarioConfig],
    estimators: &[Estimator],
    opts: &StudyOptions,
) -> Result<StudyReport> {
    validate_grid(grid, estimators)?;
    let results = run_replications(grid, opts.parallel, |c, r| {
        let cfg = &grid[c];
        let data = generate_dataset(cfg, &mut substream(cfg.seed, &[r as u64]));
        estimators
            .iter()
            .map(|e| {
                let d = data.as_ref().ok()?;
                e.fit_rates(d).ok().map(|x| x.as_array())
            })
            .collect::<Vec<_>>()
    });

    let mut rows = Vec::new();
    for (c, cfg) in grid.iter().enumerate() {
        for (k, est) in estimators.iter().enumerate() {
            let ok: Vec<[f64; 2]> = results[c].iter().filter_map(|r| r[k]).collect();
            let tp: Vec<f64> = ok.iter().map(|e| e[0]).collect();
            let tn: Vec<f64> = ok.iter().map(|e| e[1]).collect();
            let a = Accuracy::from_estimates(cfg.rates.tp(), &tp);
            let b = Accuracy::from_estimates(cfg.rates.tn(), &tn);
            rows.push(RmseRow {
                cell: c,
                n: cfg.n,
                n_trials: cfg.n_trials,
                p: cfg.p,
                rho_x: cfg.rho_x,
                pi_tp: cfg.rates.tp(),
                pi_tn: cfg.rates.tn(),
                misspec: cfg.misspec.name().to_string(),
                misspec_rho: cfg.misspec.rho(),
                replications: cfg.replications,
                seed: cfg.seed,
                estimator: est.name().to_string(),
                successes: ok.len(),
                failures: cfg.replications - ok.len(),
                mean_tp: a.mean,
                mean_tn: b.mean,
                bias_tp: a.bias,
                bias_tn: b.bias,
                var_tp: a.var,
                var_tn: b.var,
                rmse_tp: a.rmse,
                rmse_tn: b.rmse,
            });
        }
    }
    Ok(StudyReport {
        rmse: rows,
        ratios: Vec::new(),
    })
}

type ReplicateOutcome = Vec<Option<([f64; 2], Vec<Option<[f64; 2]>>)>>;

/// Ratio of the average estimated variance to the Monte Carlo variance of
/// the point estimates, per cell, estimator and method. The bootstrap in
/// replicate `r` for estimator `k` and method `j` is seeded from
/// `(cell.seed, r, k, j)`.
pub fn run_variance_ratio_study(
    grid: &[ScenarioConfig],
    estimators: &[Estimator],
    methods: &[SeMethod],
    opts: &StudyOptions,
) -> Result<StudyReport> {
    validate_grid(grid, estimators)?;
    if methods.is_empty() {
        return Err(Error::Config("no standard-error methods requested".into()));
    }
    if methods.iter().any(|m| *m != SeMethod::PlugIn) && opts.bootstrap_replicates < 2 {
        return Err(Error::Config(
            "bootstrap replicates must be at least 2".into(),
        ));
    }

    let results: Vec<Vec<ReplicateOutcome>> = run_replications(grid, opts.parallel, |c, r| {
        let cfg = &grid[c];
        let Ok(data) = generate_dataset(cfg, &mut substream(cfg.seed, &[r as u64])) else {
            return vec![None; estimators.len()];
        };
        estimators
            .iter()
            .enumerate()
            .map(|(k, est)| {
                let fit = est.fit(&data).ok()?;
                let vars = methods
                    .iter()
                    .enumerate()
                    .map(|(j, m)| match m.plan(opts.bootstrap_replicates, 0) {
                        None => fit.plugin_var,
                        Some(mut plan) => {
                            plan.seed = derive_seed(cfg.seed, &[r as u64, k as u64, j as u64]);
                            bootstrap_se_from(&data, *est, &plan, Some(fit.rates))
                                .ok()
                                .map(|b| b.se.map(|s| s * s))
                        }
                    })
                    .collect();
                Some((fit.rates.as_array(), vars))
            })
            .collect()
    });

    let mut rows = Vec::new();
    for (c, cfg) in grid.iter().enumerate() {
        for (k, est) in estimators.iter().enumerate() {
            let fits: Vec<&([f64; 2], Vec<Option<[f64; 2]>>)> =
                results[c].iter().filter_map(|r| r[k].as_ref()).collect();
            let tp: Vec<f64> = fits.iter().map(|f| f.0[0]).collect();
            let tn: Vec<f64> = fits.iter().map(|f| f.0[1]).collect();
            let ev = [mc_variance(&tp), mc_variance(&tn)];
            for (j, m) in methods.iter().enumerate() {
                let v: Vec<[f64; 2]> = fits
                    .iter()
                    .filter_map(|f| f.1[j])
                    .filter(|v| v.iter().all(|x| x.is_finite()))
                    .collect();
                let av = [
                    mean(&v.iter().map(|x| x[0]).collect::<Vec<_>>()),
                    mean(&v.iter().map(|x| x[1]).collect::<Vec<_>>()),
                ];
                rows.push(RatioRow {
                    cell: c,
                    n: cfg.n,
                    n_trials: cfg.n_trials,
                    p: cfg.p,
                    rho_x: cfg.rho_x,
                    pi_tp: cfg.rates.tp(),
                    pi_tn: cfg.rates.tn(),
                    misspec: cfg.misspec.name().to_string(),
                    misspec_rho: cfg.misspec.rho(),
                    replications: cfg.replications,
                    seed: cfg.seed,
                    estimator: est.name().to_string(),
                    method: m.to_string(),
                    fits: fits.len(),
                    estimates: v.len(),
                    mc_var_tp: ev[0],
                    mc_var_tn: ev[1],
                    avg_var_tp: av[0],
                    avg_var_tn: av[1],
                    ratio_tp: av[0] / ev[0],
                    ratio_tn: av[1] / ev[1],
                });
            }
        }
    }
    Ok(StudyReport {
        rmse: Vec::new(),
        ratios: rows,
    })
}
