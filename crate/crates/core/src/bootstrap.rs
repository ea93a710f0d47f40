//! Resampling standard errors and percentile intervals.
//!
//! Three schemes are available. The semi-parametric bootstrap resamples the
//! true counts and regenerates the contaminated counts from fitted rates.
//! The classic nonparametric bootstrap resamples `(X, Y)` pairs. The
//! m-out-of-n bootstrap resamples `m` pairs and rescales the replicate
//! standard deviation by `sqrt(n / m)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::mle::Interval;
use crate::model::{PairedDataset, PairedObs, RateParams};
use crate::rng::substream;

/// Replicates used in simulation studies.
pub const DEFAULT_SIM_REPLICATES: usize = 50;
/// Replicates used for a single data analysis.
pub const DEFAULT_ANALYSIS_REPLICATES: usize = 2000;
/// Share of failed replicates above which a result is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SemiParametric,
    Nonparametric,
    MOutOfN,
}

/// Subsample size rule for the m-out-of-n scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MRule {
    /// `floor(2n / 3)`
    TwoThirdsN,
    /// `floor(2 sqrt(n))`
    TwoSqrtN,
    Explicit(usize),
}

impl MRule {
    pub fn subsample_size(&self, n: usize) -> usize {
        match *self {
            MRule::TwoThirdsN => 2 * n / 3,
            MRule::TwoSqrtN => (2.0 * (n as f64).sqrt()).floor() as usize,
            MRule::Explicit(m) => m,
        }
    }
}

impl fmt::Display for MRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MRule::TwoThirdsN => f.write_str("2n3"),
            MRule::TwoSqrtN => f.write_str("2sqrtn"),
            MRule::Explicit(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for MRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2n3" => Ok(MRule::TwoThirdsN),
            "2sqrtn" => Ok(MRule::TwoSqrtN),
            other => other
                .strip_prefix("explicit:")
                .unwrap_or(other)
                .parse::<usize>()
                .map(MRule::Explicit)
                .map_err(|_| Error::Config(format!("unknown m rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub scheme: Scheme,
    pub m_rule: MRule,
    pub replicates: usize,
    pub seed: u64,
    /// Coverage of the percentile interval.
    pub level: f64,
    /// Run replicates on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl BootstrapPlan {
    pub fn new(scheme: Scheme, replicates: usize, seed: u64) -> Self {
        Self {
            scheme,
            m_rule: MRule::TwoThirdsN,
            replicates,
            seed,
            level: 0.95,
            parallel: false,
        }
    }

    pub fn with_m_rule(mut self, rule: MRule) -> Self {
        self.m_rule = rule;
        self
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn parallel(mut self, yes: bool) -> Self {
        self.parallel = yes;
        self
    }

    /// Resample size for a dataset of `n` observations.
    pub fn resample_size(&self, n: usize) -> usize {
        match self.scheme {
            Scheme::MOutOfN => self.m_rule.subsample_size(n),
            _ => n,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config(format!(
                "bootstrap needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level {} outside (0, 1)",
                self.level
            )));
        }
        if self.scheme == Scheme::MOutOfN {
            let m = self.m_rule.subsample_size(n);
            if m < 2 || m > n {
                return Err(Error::Domain(format!(
                    "subsample size m = {m} outside [2, {n}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Successful replicate estimates `(pi_tp, pi_tn)` in replicate order.
    pub replicate_estimates: Vec<[f64; 2]>,
    /// Standard errors, rescaled for the m-out-of-n scheme.
    pub se: [f64; 2],
    pub percentile_ci: [Interval; 2],
    /// Replicates whose estimator failed; excluded from `se`.
    pub failures: usize,
    /// Resample size used.
    pub m: usize,
    /// `sqrt(n / m)`; one for the full-size schemes.
    pub scale: f64,
}

/// `sqrt(n / m)`, the factor mapping a size-`m` spread to size `n`.
pub fn m_out_of_n_scale(n: usize, m: usize) -> f64 {
    (n as f64 / m as f64).sqrt()
}

/// Resamples the true counts (with their trial sizes) and regenerates the
/// contaminated counts from `rates`.
pub fn semi_parametric_resample<R: Rng + ?Sized>(
    data: &PairedDataset,
    rates: RateParams,
    rng: &mut R,
) -> Result<PairedDataset> {
    let n = data.len();
    let obs = (0..n)
        .map(|_| {
            let o = data.obs()[rng.random_range(0..n)];
            let tp = draw_binomial(o.x, rates.tp(), rng)?;
            let fp = draw_binomial(o.n_trials - o.x, 1.0 - rates.tn(), rng)?;
            PairedObs::new(o.x, tp + fp, o.n_trials)
        })
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(obs)
}

pub(crate) fn draw_binomial<R: Rng + ?Sized>(trials: u32, p: f64, rng: &mut R) -> Result<u32> {
    let dist = Binomial::new(trials as u64, p.clamp(0.0, 1.0))
        .map_err(|e| Error::Domain(format!("binomial({trials}, {p}): {e}")))?;
    Ok(dist.sample(rng) as u32)
}

/// Draws `m` observed pairs jointly, with replacement.
pub fn m_out_of_n_resample<R: Rng + ?Sized>(
    data: &PairedDataset,
    m: usize,
    rng: &mut R,
) -> Result<PairedDataset> {
    let n = data.len();
    if m < 2 || m > n {
        return Err(Error::Domain(format!(
            "subsample size m = {m} outside [2, {n}]"
        )));
    }
    let obs = (0..m).map(|_| data.obs()[rng.random_range(0..n)]).collect();
    PairedDataset::new(obs)
}

/// Bootstrap standard errors and percentile intervals for `estimator`.
/// The semi-parametric scheme first fits the estimator to `data` to get
/// the generating rates.
pub fn bootstrap_se(
    data: &PairedDataset,
    estimator: Estimator,
    plan: &BootstrapPlan,
) -> Result<BootstrapResult> {
    let base = match plan.scheme {
        Scheme::SemiParametric => Some(estimator.fit_rates(data)?),
        _ => None,
    };
    bootstrap_se_from(data, estimator, plan, base)
}

/// As [`bootstrap_se`] with the generating rates supplied by the caller
/// (ignored by the nonparametric schemes).
pub fn bootstrap_se_from(
    data: &PairedDataset,
    estimator: Estimator,
    plan: &BootstrapPlan,
    base: Option<RateParams>,
) -> Result<BootstrapResult> {
    let n = data.len();
    plan.validate(n)?;
    let m = plan.resample_size(n);
    let base = match (plan.scheme, base) {
        (Scheme::SemiParametric, Some(r)) => Some(r),
        (Scheme::SemiParametric, None) => Some(estimator.fit_rates(data)?),
        _ => None,
    };

    let replicate = |b: usize| -> Option<[f64; 2]> {
        let mut rng = substream(plan.seed, &[b as u64]);
        let sample = match base {
            Some(r) => semi_parametric_resample(data, r, &mut rng),
            None => m_out_of_n_resample(data, m, &mut rng),
        }
        .ok()?;
        estimator.fit_rates(&sample).ok().map(|r| r.as_array())
    };
    let draws: Vec<Option<[f64; 2]>> = if plan.parallel {
        (0..plan.replicates)
            .into_par_iter()
            .map(replicate)
            .collect()
    } else {
        (0..plan.replicates).map(replicate).collect()
    };

    let estimates: Vec<[f64; 2]> = draws.iter().flatten().copied().collect();
    let failures = plan.replicates - estimates.len();
    if estimates.len() < 2 || failures as f64 > MAX_FAILURE_FRACTION * plan.replicates as f64 {
        return Err(Error::BootstrapFailures {
            failed: failures,
            total: plan.replicates,
        });
    }
    let scale = m_out_of_n_scale(n, m);
    let se = [0, 1].map(|k| scale * sample_sd(estimates.iter().map(|e| e[k])));
    let alpha = 1.0 - plan.level;
    let percentile_ci = [0, 1].map(|k| {
        let mut v: Vec<f64> = estimates.iter().map(|e| e[k]).collect();
        v.sort_by(f64::total_cmp);
        Interval {
            lo: nearest_rank(&v, alpha / 2.0),
            hi: nearest_rank(&v, 1.0 - alpha / 2.0),
        }
    });
    Ok(BootstrapResult {
        replicate_estimates: estimates,
        se,
        percentile_ci,
        failures,
        m,
        scale,
    })
}

/// Standard deviation with divisor `n - 1`.
pub fn sample_sd(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    if n < 2 {
        return f64::NAN;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Nearest-rank quantile of sorted values: element `ceil(q * len)`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let len = sorted.len();
    let rank = ((q * len as f64).ceil() as usize).clamp(1, len);
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    fn data() -> PairedDataset {
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
    fn m_rules() {
        assert_eq!(MRule::TwoThirdsN.subsample_size(50), 33);
        assert_eq!(MRule::TwoSqrtN.subsample_size(50), 14);
        assert_eq!(MRule::Explicit(7).subsample_size(50), 7);
        assert_abs_diff_eq!(m_out_of_n_scale(50, 14), 1.889822365, epsilon = 1e-9);
        assert_eq!("2n3".parse::<MRule>().unwrap(), MRule::TwoThirdsN);
        assert_eq!("explicit:12".parse::<MRule>().unwrap(), MRule::Explicit(12));
        assert!("bogus".parse::<MRule>().is_err());
    }

    #[test]
    fn nearest_rank_quantiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.025), 1.0);
        assert_eq!(nearest_rank(&v, 0.975), 20.0);
        assert_eq!(nearest_rank(&v, 0.5), 10.0);
    }

    #[test]
    fn perfect_rates_resample_identity() {
        let mut rng = substream(3, &[]);
        let s = semi_parametric_resample(&data(), RateParams::new(1.0, 1.0).unwrap(), &mut rng)
            .unwrap();
        assert!(s.obs().iter().all(|o| o.x == o.y));
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn subsample_bounds() {
        let mut rng = substream(3, &[]);
        assert!(m_out_of_n_resample(&data(), 1, &mut rng).is_err());
        assert!(m_out_of_n_resample(&data(), 11, &mut rng).is_err());
        assert_eq!(m_out_of_n_resample(&data(), 4, &mut rng).unwrap().len(), 4);
    }

    #[test]
    fn m_equal_n_matches_classic_bootstrap() {
        let classic = BootstrapPlan::new(Scheme::Nonparametric, 40, 11);
        let moon = BootstrapPlan::new(Scheme::MOutOfN, 40, 11).with_m_rule(MRule::Explicit(10));
        let a = bootstrap_se(&data(), Estimator::Ols, &classic).unwrap();
        let b = bootstrap_se(&data(), Estimator::Ols, &moon).unwrap();
        assert_eq!(a.se, b.se);
        assert_eq!(b.scale, 1.0);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let plan = BootstrapPlan::new(Scheme::SemiParametric, 30, 5);
        let a = bootstrap_se(&data(), Estimator::Mle, &plan).unwrap();
        let b = bootstrap_se(&data(), Estimator::Mle, &plan.parallel(true)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_validation() {
        let plan = BootstrapPlan::new(Scheme::Nonparametric, 1, 0);
        assert!(bootstrap_se(&data(), Estimator::Ols, &plan).is_err());
        let plan = BootstrapPlan::new(Scheme::MOutOfN, 10, 0).with_m_rule(MRule::Explicit(50));
        assert!(bootstrap_se(&data(), Estimator::Ols, &plan).is_err());
    }
}
