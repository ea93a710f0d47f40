//! Maximum likelihood for the accuracy rates, conditional on the true counts.
//!
//! The two-parameter log-likelihood is maximized on the logit scale so that
//! iterates stay interior; estimates that run off to the edge of the unit
//! square are snapped onto it when that does not lower the likelihood.
//! Inference comes from the observed information, likelihood-ratio regions
//! and profile-likelihood intervals.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{LikelihoodKernel, PairedDataset, RateParams};
use crate::optim::{self, logistic, logit, Options};
use crate::regression;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_HESSIAN_STEP: f64 = 1e-4;

const SNAP_DISTANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub rates: RateParams,
    pub loglik: f64,
    /// Observed information; `None` when the estimate is on the boundary.
    pub info_matrix: Option<Matrix2<f64>>,
    /// `None` when the information is unavailable or not positive definite.
    pub se: Option<[f64; 2]>,
    pub converged: bool,
    pub iterations: usize,
}

/// Which accuracy rate a marginal interval refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Tp,
    Tn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn default_init(data: &PairedDataset) -> RateParams {
    match regression::fit_ols(data) {
        Ok(fit) => RateParams::clamped(fit.rates.tp(), fit.rates.tn(), 0.01, 0.99),
        Err(_) => RateParams::clamped(0.9, 0.9, 0.01, 0.99),
    }
}

/// Maximizes the conditional log-likelihood over `[0, 1]^2`.
///
/// Non-convergence is not an error: the best iterate comes back with
/// `converged = false`.
pub fn fit_mle(data: &PairedDataset, init: Option<RateParams>, tol: f64) -> Result<MleFit> {
    fit_mle_with(
        data,
        init,
        Options {
            max_iter: DEFAULT_MAX_ITER,
            tol,
        },
    )
}

pub fn fit_mle_with(
    data: &PairedDataset,
    init: Option<RateParams>,
    opts: Options,
) -> Result<MleFit> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let kernel = LikelihoodKernel::new(data);
    let start = match init {
        Some(r) => RateParams::clamped(r.tp(), r.tn(), 1e-6, 1.0 - 1e-6),
        None => default_init(data),
    };
    let objective = |t: &[f64]| -kernel.log_likelihood_at(logistic(t[0]), logistic(t[1]));
    let m = optim::minimize(objective, &[logit(start.tp()), logit(start.tn())], opts);

    let mut best = [logistic(m.x[0]), logistic(m.x[1])];
    let mut best_ll = kernel.log_likelihood_at(best[0], best[1]);
    let mut converged = m.converged;
    for i in 0..2 {
        for edge in [0.0, 1.0] {
            if (best[i] - edge).abs() < SNAP_DISTANCE {
                let mut cand = best;
                cand[i] = edge;
                let ll = kernel.log_likelihood_at(cand[0], cand[1]);
                if ll >= best_ll {
                    best = cand;
                    best_ll = ll;
                    converged = true;
                }
            }
        }
    }
    let rates = RateParams::new(best[0], best[1])?;
    let info = observed_information_kernel(&kernel, rates, DEFAULT_HESSIAN_STEP).ok();
    let se = info.as_ref().and_then(se_from_information);
    Ok(MleFit {
        rates,
        loglik: best_ll,
        info_matrix: info,
        se,
        converged,
        iterations: m.iterations,
    })
}

/// Negative Hessian of the log-likelihood by central differences with a
/// relative step per coordinate, symmetrized.
pub fn observed_information(
    data: &PairedDataset,
    rates: RateParams,
    step: f64,
) -> Result<Matrix2<f64>> {
    observed_information_kernel(&LikelihoodKernel::new(data), rates, step)
}

fn observed_information_kernel(
    kernel: &LikelihoodKernel,
    rates: RateParams,
    step: f64,
) -> Result<Matrix2<f64>> {
    if !rates.is_interior() {
        return Err(Error::Domain(
            "observed information needs rates strictly inside (0, 1)^2".into(),
        ));
    }
    let p = rates.as_array();
    let steps: Vec<f64> = p
        .iter()
        .map(|&v| (step * v).min(0.5 * v).min(0.5 * (1.0 - v)))
        .collect();
    let f = |t: &[f64]| -kernel.log_likelihood_at(t[0], t[1]);
    let h = optim::hessian(&f, &p, &steps);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Hessian entry".into()));
    }
    Ok(Matrix2::new(h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]))
}

/// Square roots of the diagonal of the inverse information, when the
/// information is positive definite.
pub fn se_from_information(info: &Matrix2<f64>) -> Option<[f64; 2]> {
    let chol = info.cholesky()?;
    let inv = chol.inverse();
    let (a, b) = (inv[(0, 0)], inv[(1, 1)]);
    (a > 0.0 && b > 0.0).then(|| [a.sqrt(), b.sqrt()])
}

/// Upper-`(1 - level)` quantile of the chi-square distribution.
pub fn chi_square_threshold(df: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let dist = ChiSquared::new(df).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.inverse_cdf(level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRegion {
    pub level: f64,
    pub threshold: f64,
    pub resolution: usize,
    /// Centers of the grid cells inside the region.
    pub cells: Vec<(f64, f64)>,
}

impl LrRegion {
    pub fn contains_cell(&self, tp: f64, tn: f64) -> bool {
        let g = self.resolution as f64;
        let center = |v: f64| ((v * g).floor().min(g - 1.0) + 0.5) / g;
        let (ct, cn) = (center(tp), center(tn));
        self.cells
            .iter()
            .any(|&(a, b)| (a - ct).abs() < 0.25 / g && (b - cn).abs() < 0.25 / g)
    }
}

/// Joint likelihood-ratio region on a `resolution x resolution` grid of
/// the unit square.
pub fn lr_confidence_region(
    data: &PairedDataset,
    fit: &MleFit,
    level: f64,
    resolution: usize,
) -> Result<LrRegion> {
    let threshold = chi_square_threshold(2.0, level)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
        });
    }
    if resolution == 0 {
        return Err(Error::Domain("grid resolution must be positive".into()));
    }
    let kernel = LikelihoodKernel::new(data);
    let g = resolution as f64;
    let cell_of = |v: f64| (v * g).floor().min(g - 1.0) as usize;
    let mle_cell = (cell_of(fit.rates.tp()), cell_of(fit.rates.tn()));
    let mut cells = Vec::new();
    for i in 0..resolution {
        for j in 0..resolution {
            let tp = (i as f64 + 0.5) / g;
            let tn = (j as f64 + 0.5) / g;
            let stat = 2.0 * (fit.loglik - kernel.log_likelihood_at(tp, tn));
            if stat <= threshold || (i, j) == mle_cell {
                cells.push((tp, tn));
            }
        }
    }
    Ok(LrRegion {
        level,
        threshold,
        resolution,
        cells,
    })
}

/// Profile log-likelihood: fixes one rate and maximizes over the other.
pub fn profile_loglik(kernel: &LikelihoodKernel, which: Param, value: f64) -> (f64, f64) {
    let f = |u: f64| match which {
        Param::Tp => -kernel.log_likelihood_at(value, u),
        Param::Tn => -kernel.log_likelihood_at(u, value),
    };
    let (u, neg) = optim::minimize_scalar(f, 0.0, 1.0, 1e-10);
    (u, -neg)
}

/// Marginal profile-likelihood interval for one rate, truncated to `[0, 1]`.
pub fn profile_ci(
    data: &PairedDataset,
    fit: &MleFit,
    which: Param,
    level: f64,
) -> Result<Interval> {
    let threshold = chi_square_threshold(1.0, level)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
        });
    }
    let kernel = LikelihoodKernel::new(data);
    let center = match which {
        Param::Tp => fit.rates.tp(),
        Param::Tn => fit.rates.tn(),
    };
    let peak = fit.loglik.max(profile_loglik(&kernel, which, center).1);
    let excess = |v: f64| 2.0 * (peak - profile_loglik(&kernel, which, v).1) - threshold;

    if excess(center) > 0.0 {
        return Err(Error::Bisection {
            lo: center,
            hi: center,
            reason: "likelihood-ratio statistic exceeds the threshold at the estimate".into(),
        });
    }
    let side = |edge: f64| -> Result<f64> {
        if excess(edge) <= 0.0 {
            return Ok(edge);
        }
        // inside at `a`, outside at `b`
        let (mut a, mut b) = (center, edge);
        for _ in 0..200 {
            if (a - b).abs() < 1e-10 {
                break;
            }
            let mid = 0.5 * (a + b);
            let e = excess(mid);
            if !e.is_finite() && e < 0.0 {
                return Err(Error::Bisection {
                    lo: a.min(b),
                    hi: a.max(b),
                    reason: "non-finite profile value".into(),
                });
            }
            if e <= 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    };
    let lo = side(0.0)?;
    let hi = side(1.0)?;
    Ok(Interval {
        lo: lo.min(center),
        hi: hi.max(center),
    })
}
