//! The binomial convolution contamination model.
//!
//! Conditional on a true count `X` out of `N` trials, the recorded count is
//! `Y = TP + FP` with `TP ~ Bin(X, pi_tp)` and `FP ~ Bin(N - X, 1 - pi_tn)`
//! independent. This module holds the parameter and data types, the
//! conditional and marginal moment identities, the conditional pmf in its
//! direct (log-domain convolution) and Fourier forms, and the conditional
//! log-likelihood.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trial counts up to this size use the direct convolution in [`pmf`];
/// larger ones go through the Fourier representation.
pub const DIRECT_PMF_MAX_TRIALS: u32 = 128;

const DFT_IMAG_LIMIT: f64 = 1e-6;

/// Accuracy rates `(pi_tp, pi_tn)`: sensitivity and specificity of the
/// contaminated count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    tp: f64,
    tn: f64,
}

impl RateParams {
    pub fn new(tp: f64, tn: f64) -> Result<Self> {
        for (name, v) in [("pi_tp", tp), ("pi_tn", tn)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { tp, tn })
    }

    /// Builds rates after clamping both coordinates into `[lo, hi]`.
    pub fn clamped(tp: f64, tn: f64, lo: f64, hi: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.5 } else { v.clamp(lo, hi) };
        Self {
            tp: c(tp),
            tn: c(tn),
        }
    }

    #[inline]
    pub fn tp(&self) -> f64 {
        self.tp
    }

    #[inline]
    pub fn tn(&self) -> f64 {
        self.tn
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.tp, self.tn]
    }

    /// `pi_tp + pi_tn - 1`, the factor linking `Cov[X, Y]` to `Var[X]`.
    #[inline]
    pub fn youden(&self) -> f64 {
        self.tp + self.tn - 1.0
    }

    pub fn is_interior(&self) -> bool {
        self.tp > 0.0 && self.tp < 1.0 && self.tn > 0.0 && self.tn < 1.0
    }
}

/// One paired observation: true count `x`, contaminated count `y`, trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairedObs {
    pub x: u32,
    pub y: u32,
    pub n_trials: u32,
}

impl PairedObs {
    pub fn new(x: u32, y: u32, n_trials: u32) -> Result<Self> {
        if n_trials == 0 {
            return Err(Error::Domain("n_trials must be at least 1".into()));
        }
        if x > n_trials || y > n_trials {
            return Err(Error::Domain(format!(
                "counts (x={x}, y={y}) exceed n_trials={n_trials}"
            )));
        }
        Ok(Self { x, y, n_trials })
    }
}

/// Ordered paired observations with the derived partition by trial count.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    obs: Vec<PairedObs>,
    labels: Option<Vec<String>>,
    groups: BTreeMap<u32, Vec<usize>>,
}

impl PairedDataset {
    pub fn new(obs: Vec<PairedObs>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let groups = partition_by_trials(&obs);
        Ok(Self {
            obs,
            labels: None,
            groups,
        })
    }

    /// Dataset with one free-form group label per observation (e.g. a
    /// passage id). Labels are only used by model comparison; the GMM
    /// grouping is always re-derived from the trial counts.
    pub fn with_labels(obs: Vec<PairedObs>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != obs.len() {
            return Err(Error::Domain(format!(
                "{} labels for {} observations",
                labels.len(),
                obs.len()
            )));
        }
        let mut ds = Self::new(obs)?;
        ds.labels = Some(labels);
        Ok(ds)
    }

    /// Convenience constructor from `(x, y, n_trials)` triples.
    pub fn from_triples(triples: &[(u32, u32, u32)]) -> Result<Self> {
        let obs = triples
            .iter()
            .map(|&(x, y, n)| PairedObs::new(x, y, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(obs)
    }

    pub fn obs(&self) -> &[PairedObs] {
        &self.obs
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Index sets of observations sharing each distinct trial count.
    pub fn groups(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.groups
    }

    /// The common trial count when every observation shares one.
    pub fn common_trials(&self) -> Option<u32> {
        if self.groups.len() == 1 {
            self.groups.keys().next().copied()
        } else {
            None
        }
    }

    /// Sub-dataset made of the given indices, preserving labels.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let obs: Vec<_> = idx.iter().map(|&i| self.obs[i]).collect();
        match &self.labels {
            Some(l) => Self::with_labels(obs, idx.iter().map(|&i| l[i].clone()).collect()),
            None => Self::new(obs),
        }
    }

    /// Groups keyed by label when labels exist, otherwise by trial count.
    pub fn label_groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        match &self.labels {
            Some(labels) => {
                for (i, l) in labels.iter().enumerate() {
                    out.entry(l.clone()).or_default().push(i);
                }
            }
            None => {
                for (n, idx) in &self.groups {
                    out.insert(format!("N={n}"), idx.clone());
                }
            }
        }
        out
    }

    /// Stacks a copy of `other` below this dataset.
    pub fn concat(&self, other: &PairedDataset) -> Result<Self> {
        let mut obs = self.obs.clone();
        obs.extend_from_slice(&other.obs);
        match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => {
                let mut l = a.clone();
                l.extend(b.iter().cloned());
                Self::with_labels(obs, l)
            }
            _ => Self::new(obs),
        }
    }
}

fn partition_by_trials(obs: &[PairedObs]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, o) in obs.iter().enumerate() {
        groups.entry(o.n_trials).or_default().push(i);
    }
    groups
}

/// First and second moments of `(X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mu_x: f64,
    pub var_x: f64,
    pub mu_y: f64,
    pub var_y: f64,
    pub cov_xy: f64,
}

impl MomentSummary {
    /// Sample moments with divisor `n`.
    pub fn from_obs(obs: &[PairedObs]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = obs.len() as f64;
        let mu_x = obs.iter().map(|o| o.x as f64).sum::<f64>() / n;
        let mu_y = obs.iter().map(|o| o.y as f64).sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for o in obs {
            let dx = o.x as f64 - mu_x;
            let dy = o.y as f64 - mu_y;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        Ok(Self {
            mu_x,
            var_x: sxx / n,
            mu_y,
            var_y: syy / n,
            cov_xy: sxy / n,
        })
    }

    pub fn from_dataset(data: &PairedDataset) -> Result<Self> {
        Self::from_obs(data.obs())
    }

    /// Expected success proportions `(mu_x / N, mu_y / N)`.
    pub fn proportions(&self, n_trials: u32) -> (f64, f64) {
        let n = n_trials as f64;
        (self.mu_x / n, self.mu_y / n)
    }
}

fn check_count(x: u32, n_trials: u32) -> Result<()> {
    if x > n_trials {
        Err(Error::Domain(format!(
            "x = {x} exceeds n_trials = {n_trials}"
        )))
    } else {
        Ok(())
    }
}

/// `E[Y | X = x]`.
pub fn conditional_mean(x: u32, n_trials: u32, rates: RateParams) -> Result<f64> {
    check_count(x, n_trials)?;
    let x = x as f64;
    let f = n_trials as f64 - x;
    Ok(x * rates.tp + f * (1.0 - rates.tn))
}

/// `Var[Y | X = x]`.
pub fn conditional_variance(x: u32, n_trials: u32, rates: RateParams) -> Result<f64> {
    check_count(x, n_trials)?;
    let x = x as f64;
    let f = n_trials as f64 - x;
    Ok(x * rates.tp * (1.0 - rates.tp) + f * (1.0 - rates.tn) * rates.tn)
}

/// Marginal moments of `Y` implied by the moments of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalMoments {
    pub mu_y: f64,
    pub var_y: f64,
    pub cov_xy: f64,
}

// Raw-coordinate forms; the moment conditions evaluate them slightly
// outside the unit square when differencing.
pub(crate) fn marginal_mean_y(mu_x: f64, n_trials: f64, tp: f64, tn: f64) -> f64 {
    mu_x * tp + (n_trials - mu_x) * (1.0 - tn)
}

pub(crate) fn marginal_var_y(mu_x: f64, var_x: f64, n_trials: f64, tp: f64, tn: f64) -> f64 {
    let a_tp = tp * (1.0 - tp);
    let a_tn = tn * (1.0 - tn);
    let j = tp + tn - 1.0;
    mu_x * (a_tp - a_tn) + n_trials * a_tn + var_x * j * j
}

pub fn marginal_moments(
    mu_x: f64,
    var_x: f64,
    n_trials: u32,
    rates: RateParams,
) -> Result<MarginalMoments> {
    let n = n_trials as f64;
    if !(0.0..=n).contains(&mu_x) {
        return Err(Error::Domain(format!("mu_x = {mu_x} outside [0, {n}]")));
    }
    if !(var_x >= 0.0) {
        return Err(Error::Domain(format!("var_x = {var_x} is negative")));
    }
    Ok(MarginalMoments {
        mu_y: marginal_mean_y(mu_x, n, rates.tp, rates.tn),
        var_y: marginal_var_y(mu_x, var_x, n, rates.tp, rates.tn),
        cov_xy: var_x * rates.youden(),
    })
}

/// `k * ln(p)` with the convention `0 * ln(0) = 0`.
#[inline]
fn xlny(k: u32, ln_p: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * ln_p
    }
}

/// Table of `ln(k!)` for `k = 0..=max`.
#[derive(Debug, Clone)]
pub(crate) struct LnFactorials(Vec<f64>);

impl LnFactorials {
    pub(crate) fn new(max: u32) -> Self {
        let mut t = Vec::with_capacity(max as usize + 1);
        t.push(0.0);
        for k in 1..=max as usize {
            // Exact accumulation of ln k is accurate enough up to tens of
            // thousands of trials; statrs covers the large-argument regime.
            if k <= 1024 {
                let prev = t[k - 1];
                t.push(prev + (k as f64).ln());
            } else {
                t.push(statrs::function::factorial::ln_factorial(k as u64));
            }
        }
        Self(t)
    }

    #[inline]
    fn ln_choose(&self, n: u32, k: u32) -> f64 {
        self.0[n as usize] - self.0[k as usize] - self.0[(n - k) as usize]
    }
}

/// Logarithms of the four cell probabilities, with `ln 0 = -inf`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LnRates {
    tp: f64,
    fn_: f64,
    fp: f64,
    tn: f64,
}

impl LnRates {
    pub(crate) fn new(r: RateParams) -> Self {
        Self {
            tp: r.tp.ln(),
            fn_: (-r.tp).ln_1p(),
            fp: (-r.tn).ln_1p(),
            tn: r.tn.ln(),
        }
    }
}

/// `ln P(Y = y | X = x)` by log-sum-exp over the convolution terms.
pub(crate) fn ln_pmf_with(y: u32, x: u32, n: u32, lr: &LnRates, lf: &LnFactorials) -> f64 {
    let fails = n - x;
    let k_lo = (x + y).saturating_sub(n);
    let k_hi = x.min(y);
    if k_lo > k_hi {
        return f64::NEG_INFINITY;
    }
    let mut terms = Vec::with_capacity((k_hi - k_lo + 1) as usize);
    let mut max = f64::NEG_INFINITY;
    for k in k_lo..=k_hi {
        let fp = y - k;
        let t = lf.ln_choose(x, k)
            + lf.ln_choose(fails, fp)
            + xlny(k, lr.tp)
            + xlny(x - k, lr.fn_)
            + xlny(fp, lr.fp)
            + xlny(fails - fp, lr.tn);
        if t > max {
            max = t;
        }
        terms.push(t);
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + s.ln()
}

fn check_pair(y: u32, x: u32, n_trials: u32) -> Result<()> {
    if n_trials == 0 {
        return Err(Error::Domain("n_trials must be at least 1".into()));
    }
    if x > n_trials || y > n_trials {
        return Err(Error::Domain(format!(
            "(x={x}, y={y}) outside 0..={n_trials}"
        )));
    }
    Ok(())
}

/// `ln P(Y = y | X = x)` via the direct convolution.
pub fn ln_pmf_direct(y: u32, x: u32, n_trials: u32, rates: RateParams) -> Result<f64> {
    check_pair(y, x, n_trials)?;
    let lf = LnFactorials::new(n_trials);
    Ok(ln_pmf_with(y, x, n_trials, &LnRates::new(rates), &lf))
}

/// `P(Y = y | X = x)` as a finite convolution of two binomials, evaluated in
/// the log domain.
pub fn pmf_direct(y: u32, x: u32, n_trials: u32, rates: RateParams) -> Result<f64> {
    ln_pmf_direct(y, x, n_trials, rates).map(f64::exp)
}

/// The whole conditional distribution `P(Y = . | X = x)` by direct convolution.
pub fn pmf_direct_all(x: u32, n_trials: u32, rates: RateParams) -> Result<Vec<f64>> {
    check_pair(0, x, n_trials)?;
    let lf = LnFactorials::new(n_trials);
    let lr = LnRates::new(rates);
    Ok((0..=n_trials)
        .map(|y| ln_pmf_with(y, x, n_trials, &lr, &lf).exp())
        .collect())
}

/// Characteristic function of `Y | X = x` at the `l`-th Fourier frequency.
fn char_fn(x: u32, n_trials: u32, rates: RateParams, s: f64) -> Complex64 {
    let e = Complex64::from_polar(1.0, s);
    let a = Complex64::new(1.0 - rates.tp, 0.0) + e * rates.tp;
    let b = Complex64::new(rates.tn, 0.0) + e * (1.0 - rates.tn);
    a.powu(x) * b.powu(n_trials - x)
}

/// `P(Y = y | X = x)` by inverting the characteristic function on the
/// `N + 1` Fourier frequencies.
pub fn pmf_dft(y: u32, x: u32, n_trials: u32, rates: RateParams) -> Result<f64> {
    check_pair(y, x, n_trials)?;
    let m = n_trials as usize + 1;
    let omega = 2.0 * PI / m as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for l in 0..m {
        let s = omega * l as f64;
        // e^{-iys} reduced modulo the period to keep the phase small
        let phase = -omega * ((y as usize * l) % m) as f64;
        acc += char_fn(x, n_trials, rates, s) * Complex64::from_polar(1.0, phase);
    }
    acc /= m as f64;
    if acc.im.abs() > DFT_IMAG_LIMIT {
        return Err(Error::Numerical(format!(
            "imaginary residue {:e} in inverse transform",
            acc.im
        )));
    }
    Ok(acc.re.clamp(0.0, 1.0))
}

/// The whole conditional distribution by a single inverse FFT.
pub fn pmf_dft_all(x: u32, n_trials: u32, rates: RateParams) -> Result<Vec<f64>> {
    check_pair(0, x, n_trials)?;
    let m = n_trials as usize + 1;
    let omega = 2.0 * PI / m as f64;
    let mut buf: Vec<Complex64> = (0..m)
        .map(|l| char_fn(x, n_trials, rates, omega * l as f64))
        .collect();
    // sum_l phi_l e^{-i y s_l} is a forward DFT of the phi sequence.
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    buf.into_iter()
        .map(|c| {
            let c = c / m as f64;
            if c.im.abs() > DFT_IMAG_LIMIT {
                Err(Error::Numerical(format!(
                    "imaginary residue {:e} in inverse transform",
                    c.im
                )))
            } else {
                Ok(c.re.clamp(0.0, 1.0))
            }
        })
        .collect()
}

/// Conditional pmf, dispatching on the trial count.
pub fn pmf(y: u32, x: u32, n_trials: u32, rates: RateParams) -> Result<f64> {
    if n_trials <= DIRECT_PMF_MAX_TRIALS {
        pmf_direct(y, x, n_trials, rates)
    } else {
        pmf_dft(y, x, n_trials, rates)
    }
}

/// Conditional log-likelihood `sum_j ln f_j(Y_j | X_j)`; `-inf` when some
/// observation is impossible under `rates`.
pub fn log_likelihood(data: &PairedDataset, rates: RateParams) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(LikelihoodKernel::new(data).log_likelihood(rates))
}

/// Log-likelihood evaluator that collapses repeated `(x, y, N)` cells and
/// caches the log-factorial table. Evaluating it repeatedly is the inner
/// loop of every likelihood-based routine.
#[derive(Debug, Clone)]
pub struct LikelihoodKernel {
    cells: Vec<(PairedObs, f64)>,
    lf: LnFactorials,
    n_obs: usize,
}

impl LikelihoodKernel {
    pub fn new(data: &PairedDataset) -> Self {
        Self::from_obs(data.obs())
    }

    pub fn from_obs(obs: &[PairedObs]) -> Self {
        let mut counts: BTreeMap<PairedObs, usize> = BTreeMap::new();
        for o in obs {
            *counts.entry(*o).or_default() += 1;
        }
        let max_n = obs.iter().map(|o| o.n_trials).max().unwrap_or(0);
        Self {
            cells: counts.into_iter().map(|(o, c)| (o, c as f64)).collect(),
            lf: LnFactorials::new(max_n),
            n_obs: obs.len(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn log_likelihood(&self, rates: RateParams) -> f64 {
        let lr = LnRates::new(rates);
        let mut total = 0.0;
        for (o, c) in &self.cells {
            let l = ln_pmf_with(o.y, o.x, o.n_trials, &lr, &self.lf);
            if l == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += c * l;
        }
        total
    }

    /// Log-likelihood at raw coordinates; `-inf` outside `[0, 1]^2`.
    pub fn log_likelihood_at(&self, tp: f64, tn: f64) -> f64 {
        match RateParams::new(tp, tn) {
            Ok(r) => self.log_likelihood(r),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}
