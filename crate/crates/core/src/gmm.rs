//! Generalized method of moments for `theta = (mu_x, var_x, pi_tp, pi_tn)`.
//!
//! Five moment conditions match the first and second moments of `X`, the
//! mean and variance of `Y`, and `Cov[X, Y]` to the values the model
//! implies. The weighting matrix is the inverse empirical covariance of the
//! moment functions evaluated once at a consistent starting value (sample
//! moments plus clamped least-squares rates), optionally re-estimated a few
//! times. Data with several trial sizes are fitted with a composite
//! objective: one term per distinct `N`, each with its own nuisance pair,
//! sharing the accuracy rates.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{marginal_mean_y, marginal_var_y, PairedDataset, PairedObs, RateParams};
use crate::optim::{self, logistic, logit, Options};
use crate::regression;

pub const N_MOMENTS: usize = 5;
/// Minimum group size for a well-estimated 5x5 moment covariance.
pub const MIN_GROUP_SIZE: usize = 6;

const RIDGE_CONDITION: f64 = 1e12;
const JACOBIAN_STEP: f64 = 1e-5;
const SNAP_DISTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub mu_x: f64,
    pub var_x: f64,
    pub rates: RateParams,
}

impl GmmParams {
    pub fn new(mu_x: f64, var_x: f64, rates: RateParams) -> Result<Self> {
        if !(mu_x >= 0.0) || !(var_x >= 0.0) {
            return Err(Error::Domain(format!(
                "nuisance parameters (mu_x={mu_x}, var_x={var_x}) must be nonnegative"
            )));
        }
        Ok(Self { mu_x, var_x, rates })
    }
}

/// `(g1, ..., g5)` on raw coordinates; polynomial, so defined everywhere.
#[inline]
fn moments_raw(x: f64, y: f64, n: f64, mu: f64, var: f64, tp: f64, tn: f64) -> [f64; N_MOMENTS] {
    let mu_y = marginal_mean_y(mu, n, tp, tn);
    let var_y = marginal_var_y(mu, var, n, tp, tn);
    let dx = x - mu;
    let dy = y - mu_y;
    [
        dx,
        dx * dx - var,
        dy,
        dy * dy - var_y,
        dx * dy - var * (tp + tn - 1.0),
    ]
}

/// Moment functions of one observation at `params`, with `N` taken from
/// the observation.
pub fn moment_vector(obs: &PairedObs, params: &GmmParams) -> [f64; N_MOMENTS] {
    moments_raw(
        obs.x as f64,
        obs.y as f64,
        obs.n_trials as f64,
        params.mu_x,
        params.var_x,
        params.rates.tp(),
        params.rates.tn(),
    )
}

/// Nuisance estimates for one distinct trial count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub n_trials: u32,
    pub n_obs: usize,
    pub mu_x: f64,
    pub var_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub rates: RateParams,
    pub groups: Vec<GroupEstimate>,
    /// Sum of the group objectives at the optimum.
    pub objective: f64,
    /// One 5x5 weighting matrix per group.
    pub weight_matrices: Vec<DMatrix<f64>>,
    /// One 5x4 Jacobian per group, columns `(mu_x, var_x, pi_tp, pi_tn)`.
    pub jacobians: Vec<DMatrix<f64>>,
    /// Sandwich covariance ordered `(mu_x, var_x)` per group, then
    /// `(pi_tp, pi_tn)`. `None` when the information matrix is singular.
    pub covariance: Option<DMatrix<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

impl GmmFit {
    /// Parameters of the first (for single-`N` data, the only) group.
    pub fn params(&self) -> GmmParams {
        let g = self.groups[0];
        GmmParams {
            mu_x: g.mu_x,
            var_x: g.var_x,
            rates: self.rates,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(|g| g.n_obs).sum()
    }

    /// 4x4 sandwich covariance of `(mu_x, var_x, pi_tp, pi_tn)` for group `k`.
    pub fn sandwich_var(&self, k: usize) -> Option<DMatrix<f64>> {
        let cov = self.covariance.as_ref()?;
        let r = cov.nrows() - 2;
        let idx = [2 * k, 2 * k + 1, r, r + 1];
        Some(DMatrix::from_fn(4, 4, |i, j| cov[(idx[i], idx[j])]))
    }

    /// Sandwich variances of `(pi_tp, pi_tn)`.
    pub fn rate_variances(&self) -> Option<[f64; 2]> {
        let cov = self.covariance.as_ref()?;
        let r = cov.nrows() - 2;
        Some([cov[(r, r)], cov[(r + 1, r + 1)]])
    }
}

/// Square roots of the sandwich diagonal in the covariance's ordering;
/// entries with a negative variance come back as `None`.
pub fn gmm_sandwich_se(fit: &GmmFit) -> Result<Vec<Option<f64>>> {
    let cov = fit
        .covariance
        .as_ref()
        .ok_or_else(|| Error::Singular("sandwich covariance unavailable".into()))?;
    Ok(sqrt_diagonal(cov))
}

pub fn sqrt_diagonal(cov: &DMatrix<f64>) -> Vec<Option<f64>> {
    cov.diagonal()
        .iter()
        .map(|&v| (v >= 0.0 && v.is_finite()).then(|| v.sqrt()))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GmmOptions {
    /// Number of times the weighting matrix is re-estimated at the
    /// current estimate after the first fit.
    pub iterate_weights: usize,
    pub optim: Options,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            iterate_weights: 0,
            optim: Options {
                max_iter: 2000,
                tol: 1e-10,
            },
        }
    }
}

/// Distinct `(x, y)` cells of one trial-size group with multiplicities.
#[derive(Debug, Clone)]
struct Group {
    n_trials: u32,
    n_obs: usize,
    cells: Vec<(f64, f64, f64)>,
}

impl Group {
    fn new(n_trials: u32, obs: impl Iterator<Item = PairedObs>) -> Self {
        let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        let mut n_obs = 0;
        for o in obs {
            *counts.entry((o.x, o.y)).or_default() += 1;
            n_obs += 1;
        }
        Self {
            n_trials,
            n_obs,
            cells: counts
                .into_iter()
                .map(|((x, y), c)| (x as f64, y as f64, c as f64))
                .collect(),
        }
    }

    fn mean_moments(&self, mu: f64, var: f64, tp: f64, tn: f64) -> DVector<f64> {
        let n = self.n_trials as f64;
        let mut acc = [0.0; N_MOMENTS];
        for &(x, y, c) in &self.cells {
            let g = moments_raw(x, y, n, mu, var, tp, tn);
            for i in 0..N_MOMENTS {
                acc[i] += c * g[i];
            }
        }
        DVector::from_iterator(N_MOMENTS, acc.iter().map(|a| a / self.n_obs as f64))
    }

    fn moment_covariance(&self, mu: f64, var: f64, tp: f64, tn: f64) -> DMatrix<f64> {
        let n = self.n_trials as f64;
        let mean = self.mean_moments(mu, var, tp, tn);
        let mut s = DMatrix::zeros(N_MOMENTS, N_MOMENTS);
        for &(x, y, c) in &self.cells {
            let g = DVector::from_row_slice(&moments_raw(x, y, n, mu, var, tp, tn)) - &mean;
            s += (&g * g.transpose()) * c;
        }
        s / self.n_obs as f64
    }

    fn sample_nuisance(&self) -> (f64, f64) {
        let m = self.n_obs as f64;
        let mu = self.cells.iter().map(|&(x, _, c)| c * x).sum::<f64>() / m;
        let var = self
            .cells
            .iter()
            .map(|&(x, _, c)| c * (x - mu).powi(2))
            .sum::<f64>()
            / m;
        (mu, var)
    }
}

/// Inverse of the (possibly ridge-regularized) moment covariance.
fn weight_from_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let trace = sym.trace();
    let ill = !(min > 0.0) || max / min > RIDGE_CONDITION;
    let reg = if ill {
        if !(trace > 0.0) {
            return Err(Error::Singular(
                "moment covariance is zero; ridge cannot repair it".into(),
            ));
        }
        &sym + DMatrix::identity(N_MOMENTS, N_MOMENTS) * (1e-8 * trace / N_MOMENTS as f64)
    } else {
        sym
    };
    let w = reg
        .cholesky()
        .ok_or_else(|| Error::Singular("moment covariance is not positive definite".into()))?
        .inverse();
    Ok((&w + w.transpose()) * 0.5)
}

/// Layout of the unconstrained optimizer vector: per group
/// `(scaled-logit mu_x, log var_x)`, then `(logit pi_tp, logit pi_tn)`.
struct Layout<'a> {
    groups: &'a [Group],
}

impl Layout<'_> {
    fn dim(&self) -> usize {
        2 * self.groups.len() + 2
    }

    fn decode(&self, t: &[f64]) -> (Vec<(f64, f64)>, f64, f64) {
        let k = self.groups.len();
        let nuis = self
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.n_trials as f64 * logistic(t[2 * i]), t[2 * i + 1].exp()))
            .collect();
        (nuis, logistic(t[2 * k]), logistic(t[2 * k + 1]))
    }

    fn encode(&self, nuis: &[(f64, f64)], tp: f64, tn: f64) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.dim());
        for (g, &(mu, var)) in self.groups.iter().zip(nuis) {
            let n = g.n_trials as f64;
            let p = (mu / n).clamp(1e-6, 1.0 - 1e-6);
            t.push(logit(p));
            t.push(var.max(1e-6).ln());
        }
        t.push(logit(tp.clamp(1e-6, 1.0 - 1e-6)));
        t.push(logit(tn.clamp(1e-6, 1.0 - 1e-6)));
        t
    }
}

fn objective(
    groups: &[Group],
    weights: &[DMatrix<f64>],
    nuis: &[(f64, f64)],
    tp: f64,
    tn: f64,
) -> f64 {
    groups
        .iter()
        .zip(weights)
        .zip(nuis)
        .map(|((g, w), &(mu, var))| {
            let gbar = g.mean_moments(mu, var, tp, tn);
            (gbar.transpose() * w * &gbar)[(0, 0)]
        })
        .sum()
}

fn default_rates(data: &PairedDataset) -> RateParams {
    match regression::fit_ols(data) {
        Ok(fit) => RateParams::clamped(fit.rates.tp(), fit.rates.tn(), 0.01, 0.99),
        Err(_) => RateParams::clamped(0.9, 0.9, 0.01, 0.99),
    }
}

fn build_groups(data: &PairedDataset) -> Vec<Group> {
    data.groups()
        .iter()
        .map(|(&n, idx)| Group::new(n, idx.iter().map(|&i| data.obs()[i])))
        .collect()
}

/// Single-`N` GMM fit.
pub fn fit_gmm(data: &PairedDataset, init: Option<GmmParams>) -> Result<GmmFit> {
    fit_gmm_with(data, init, GmmOptions::default())
}

pub fn fit_gmm_with(
    data: &PairedDataset,
    init: Option<GmmParams>,
    opts: GmmOptions,
) -> Result<GmmFit> {
    let mut keys = data.groups().keys();
    if let (Some(&a), Some(&b)) = (keys.next(), keys.next()) {
        return Err(Error::HeterogeneousTrials(a, b));
    }
    if data.len() < MIN_GROUP_SIZE {
        return Err(Error::InsufficientData(format!(
            "GMM needs at least {MIN_GROUP_SIZE} observations, got {}",
            data.len()
        )));
    }
    let groups = build_groups(data);
    let (nuis, rates) = match init {
        Some(p) => (vec![(p.mu_x, p.var_x)], p.rates),
        None => (vec![groups[0].sample_nuisance()], default_rates(data)),
    };
    fit_groups(&groups, nuis, rates, opts, 1.0)
}

/// Composite fit: one objective per distinct trial count, rates shared.
pub fn fit_gmm_composite(data: &PairedDataset, init: Option<RateParams>) -> Result<GmmFit> {
    fit_gmm_composite_with(data, init, GmmOptions::default())
}

pub fn fit_gmm_composite_with(
    data: &PairedDataset,
    init: Option<RateParams>,
    opts: GmmOptions,
) -> Result<GmmFit> {
    let groups = build_groups(data);
    for g in &groups {
        if g.n_obs < 2 {
            return Err(Error::InsufficientData(format!(
                "trial size {} has {} observation(s); each group needs at least 2",
                g.n_trials, g.n_obs
            )));
        }
        if g.n_obs < MIN_GROUP_SIZE {
            warn!(
                "trial size {} has only {} observations; its weighting matrix is poorly estimated",
                g.n_trials, g.n_obs
            );
        }
    }
    let nuis = groups.iter().map(Group::sample_nuisance).collect();
    let rates = init.unwrap_or_else(|| default_rates(data));
    fit_groups(&groups, nuis, rates, opts, 1.0)
}

/// Fits single-`N` data with the plain estimator and anything else with
/// the composite objective.
pub fn fit_gmm_auto(data: &PairedDataset) -> Result<GmmFit> {
    fit_gmm_auto_with(data, GmmOptions::default())
}

pub fn fit_gmm_auto_with(data: &PairedDataset, opts: GmmOptions) -> Result<GmmFit> {
    if data.common_trials().is_some() {
        fit_gmm_with(data, None, opts)
    } else {
        fit_gmm_composite_with(data, None, opts)
    }
}

fn fit_groups(
    groups: &[Group],
    init_nuis: Vec<(f64, f64)>,
    init_rates: RateParams,
    opts: GmmOptions,
    weight_scale: f64,
) -> Result<GmmFit> {
    let layout = Layout { groups };
    let (mut nuis, mut tp, mut tn) = (init_nuis, init_rates.tp(), init_rates.tn());
    let mut weights = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut q = f64::INFINITY;

    for _ in 0..=opts.iterate_weights {
        weights = groups
            .iter()
            .zip(&nuis)
            .map(|(g, &(mu, var))| {
                weight_from_covariance(&g.moment_covariance(mu, var, tp, tn))
                    .map(|w| w * weight_scale)
            })
            .collect::<Result<Vec<_>>>()?;
        let f = |t: &[f64]| {
            let (nu, a, b) = layout.decode(t);
            objective(groups, &weights, &nu, a, b)
        };
        let m = optim::minimize(f, &layout.encode(&nuis, tp, tn), opts.optim);
        let (nu, a, b) = layout.decode(&m.x);
        nuis = nu;
        tp = a;
        tn = b;
        q = m.value;
        converged = m.converged;
        iterations += m.iterations;

        // the logit parametrization cannot reach the edge of the unit square
        for which in 0..2 {
            let cur = if which == 0 { tp } else { tn };
            for edge in [0.0, 1.0] {
                if (cur - edge).abs() < SNAP_DISTANCE {
                    let (ctp, ctn) = if which == 0 { (edge, tn) } else { (tp, edge) };
                    let cq = objective(groups, &weights, &nuis, ctp, ctn);
                    if cq <= q {
                        tp = ctp;
                        tn = ctn;
                        q = cq;
                        converged = true;
                    }
                }
            }
        }
    }

    let jacobians: Vec<DMatrix<f64>> = groups
        .iter()
        .zip(&nuis)
        .map(|(g, &(mu, var))| jacobian(g, mu, var, tp, tn))
        .collect();

    let dim = layout.dim();
    let k = groups.len();
    let mut info = DMatrix::zeros(dim, dim);
    for (i, ((g, w), jac)) in groups.iter().zip(&weights).zip(&jacobians).enumerate() {
        // the sandwich uses the unscaled inverse covariance
        let block = jac.transpose() * (w / weight_scale) * jac * g.n_obs as f64;
        let idx = [2 * i, 2 * i + 1, 2 * k, 2 * k + 1];
        for a in 0..4 {
            for b in 0..4 {
                info[(idx[a], idx[b])] += block[(a, b)];
            }
        }
    }
    let covariance = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| info.try_inverse())
        .map(|c| (&c + c.transpose()) * 0.5);

    Ok(GmmFit {
        rates: RateParams::clamped(tp, tn, 0.0, 1.0),
        groups: groups
            .iter()
            .zip(&nuis)
            .map(|(g, &(mu_x, var_x))| GroupEstimate {
                n_trials: g.n_trials,
                n_obs: g.n_obs,
                mu_x,
                var_x,
            })
            .collect(),
        objective: q / weight_scale,
        weight_matrices: weights.into_iter().map(|w| w / weight_scale).collect(),
        jacobians,
        covariance,
        converged,
        iterations,
    })
}

/// Central-difference Jacobian of the mean moment vector with respect to
/// `(mu_x, var_x, pi_tp, pi_tn)`.
fn jacobian(g: &Group, mu: f64, var: f64, tp: f64, tn: f64) -> DMatrix<f64> {
    let theta = [mu, var, tp, tn];
    let mut jac = DMatrix::zeros(N_MOMENTS, 4);
    for c in 0..4 {
        let h = JACOBIAN_STEP * theta[c].abs().max(1e-3);
        let mut plus = theta;
        let mut minus = theta;
        plus[c] += h;
        minus[c] -= h;
        let gp = g.mean_moments(plus[0], plus[1], plus[2], plus[3]);
        let gm = g.mean_moments(minus[0], minus[1], minus[2], minus[3]);
        jac.set_column(c, &((gp - gm) / (2.0 * h)));
    }
    jac
}

/// Parameter shift caused by deleting one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub index: usize,
    pub obs: PairedObs,
    /// Rates refitted without the observation, when the refit succeeded.
    pub rates: Option<RateParams>,
    /// `(delta pi_tp, delta pi_tn)` relative to the full-data fit.
    pub shift: Option<[f64; 2]>,
}

/// Leave-one-out sensitivity of the GMM rates. Nothing is deleted; the
/// report is for inspection.
pub fn leave_one_out_influence(data: &PairedDataset) -> Result<(GmmFit, Vec<Influence>)> {
    let full = fit_gmm_auto(data)?;
    let n = data.len();
    let rows = (0..n)
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let refit = data.subset(&keep).and_then(|d| fit_gmm_auto(&d)).ok();
            let rates = refit.map(|f| f.rates);
            Influence {
                index: i,
                obs: data.obs()[i],
                rates,
                shift: rates.map(|r| [r.tp() - full.rates.tp(), r.tn() - full.rates.tn()]),
            }
        })
        .collect();
    Ok((full, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample() -> PairedDataset {
        PairedDataset::from_triples(&[
            (50, 52, 60),
            (57, 55, 60),
            (59, 59, 60),
            (54, 56, 60),
            (58, 58, 60),
            (55, 57, 60),
            (56, 56, 60),
            (52, 53, 60),
            (60, 59, 60),
            (53, 55, 60),
        ])
        .unwrap()
    }

    #[test]
    fn centering_terms_vanish_at_means() {
        let mu_y = marginal_mean_y(6.0, 10.0, 0.9, 0.8);
        assert_eq!(mu_y, 6.0 * 0.9 + 4.0 * 0.2);
        // y = 6.2 is not a count, so evaluate the raw form directly
        let g = moments_raw(6.0, mu_y, 10.0, 6.0, 1.5, 0.9, 0.8);
        assert_eq!(g[0], 0.0);
        assert_abs_diff_eq!(g[2], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn covariance_term_vanishes_when_uninformative() {
        let rates = RateParams::new(0.35, 0.65).unwrap();
        let p = GmmParams::new(4.2, 2.0, rates).unwrap();
        let o = PairedObs::new(6, 3, 10).unwrap();
        let g = moment_vector(&o, &p);
        let mu_y = marginal_mean_y(4.2, 10.0, 0.35, 0.65);
        assert_eq!(g[4], (6.0 - 4.2) * (3.0 - mu_y));
    }

    #[test]
    fn fit_objective_is_nonnegative_and_weights_symmetric() {
        let fit = fit_gmm(&sample(), None).unwrap();
        assert!(fit.objective >= 0.0);
        let w = &fit.weight_matrices[0];
        assert_eq!(w, &w.transpose());
        assert!(w.clone().cholesky().is_some());
        let cov = fit.covariance.clone().unwrap();
        assert_eq!(cov, cov.transpose());
        assert_eq!(fit.sandwich_var(0).unwrap().shape(), (4, 4));
    }

    #[test]
    fn weight_rescaling_leaves_argmin_unchanged() {
        let ds = sample();
        let groups = build_groups(&ds);
        let nuis = vec![groups[0].sample_nuisance()];
        let rates = default_rates(&ds);
        let a = fit_groups(&groups, nuis.clone(), rates, GmmOptions::default(), 1.0).unwrap();
        let b = fit_groups(&groups, nuis, rates, GmmOptions::default(), 37.5).unwrap();
        assert_abs_diff_eq!(a.rates.tp(), b.rates.tp(), epsilon = 1e-5);
        assert_abs_diff_eq!(a.rates.tn(), b.rates.tn(), epsilon = 1e-5);
        assert_abs_diff_eq!(a.objective, b.objective, epsilon = 1e-8);
    }

    #[test]
    fn single_group_composite_matches_plain_fit() {
        let ds = sample();
        let a = fit_gmm(&ds, None).unwrap();
        let b = fit_gmm_composite(&ds, None).unwrap();
        assert_abs_diff_eq!(a.rates.tp(), b.rates.tp(), epsilon = 1e-8);
        assert_abs_diff_eq!(a.rates.tn(), b.rates.tn(), epsilon = 1e-8);
    }

    #[test]
    fn input_validation() {
        let mixed = PairedDataset::from_triples(&[(1, 1, 3), (2, 2, 4)]).unwrap();
        assert!(matches!(
            fit_gmm(&mixed, None),
            Err(Error::HeterogeneousTrials(3, 4))
        ));
        let small = PairedDataset::from_triples(&[(1, 1, 3), (2, 2, 3)]).unwrap();
        assert!(matches!(
            fit_gmm(&small, None),
            Err(Error::InsufficientData(_))
        ));
        let lonely = sample()
            .concat(&PairedDataset::from_triples(&[(3, 3, 7)]).unwrap())
            .unwrap();
        assert!(matches!(
            fit_gmm_composite(&lonely, None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn sandwich_se_square_roots() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0, 1e-4, 1e-2]));
        let se = sqrt_diagonal(&cov);
        assert_eq!(se, vec![Some(2.0), Some(3.0), Some(0.01), Some(0.1)]);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, -1.0]));
        assert_eq!(sqrt_diagonal(&neg), vec![Some(2.0), None]);
    }

    #[test]
    fn influence_reports_every_observation() {
        let ds = sample();
        let (_, rows) = leave_one_out_influence(&ds).unwrap();
        assert_eq!(rows.len(), ds.len());
        assert!(rows.iter().all(|r| r.shift.is_some()));
    }
}
