use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::bootstrap::draw_binomial;
use crate::error::{Error, Result};
use crate::model::{PairedDataset, PairedObs, RateParams};

/// How the contamination channels depart from the binomial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "rho", rename_all = "snake_case")]
pub enum Misspec {
    None,
    /// True positives drawn beta-binomial with the given ICC.
    OverdispersedTp(f64),
    /// False positives drawn beta-binomial with the given ICC.
    OverdispersedTn(f64),
    OverdispersedBoth(f64),
}

impl Misspec {
    pub fn name(&self) -> &'static str {
        match self {
            Misspec::None => "none",
            Misspec::OverdispersedTp(_) => "overdispersed_tp",
            Misspec::OverdispersedTn(_) => "overdispersed_tn",
            Misspec::OverdispersedBoth(_) => "overdispersed_both",
        }
    }

    pub fn rho(&self) -> f64 {
        match *self {
            Misspec::None => 0.0,
            Misspec::OverdispersedTp(r)
            | Misspec::OverdispersedTn(r)
            | Misspec::OverdispersedBoth(r) => r,
        }
    }

    pub fn from_parts(name: &str, rho: f64) -> Result<Self> {
        match name {
            "none" => Ok(Misspec::None),
            "overdispersed_tp" | "tp" => Ok(Misspec::OverdispersedTp(rho)),
            "overdispersed_tn" | "tn" => Ok(Misspec::OverdispersedTn(rho)),
            "overdispersed_both" | "both" => Ok(Misspec::OverdispersedBoth(rho)),
            other => Err(Error::Config(format!(
                "unknown misspecification mode '{other}'"
            ))),
        }
    }

    fn channel_rhos(&self) -> (f64, f64) {
        match *self {
            Misspec::None => (0.0, 0.0),
            Misspec::OverdispersedTp(r) => (r, 0.0),
            Misspec::OverdispersedTn(r) => (0.0, r),
            Misspec::OverdispersedBoth(r) => (r, r),
        }
    }
}

/// One simulation cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Observations per dataset.
    pub n: usize,
    pub n_trials: u32,
    /// Success probability of the true counts.
    pub p: f64,
    /// ICC of the true counts; zero gives binomial `X`.
    pub rho_x: f64,
    pub rates: RateParams,
    pub misspec: Misspec,
    pub replications: usize,
    /// Cell seed; replicate `r` draws from the substream `(seed, r)`.
    pub seed: u64,
}

impl ScenarioConfig {
    /// The correctly specified design with `n = 50`, `N = 60`, `p = 0.95`,
    /// `pi_tp = 0.98`, `pi_tn = 0.70`.
    pub fn baseline() -> Self {
        Self {
            n: 50,
            n_trials: 60,
            p: 0.95,
            rho_x: 0.0,
            rates: RateParams::new(0.98, 0.70).expect("valid baseline rates"),
            misspec: Misspec::None,
            replications: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.n_trials == 0 {
            return bad("n_trials must be positive".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p = {} outside [0, 1]", self.p));
        }
        check_icc(self.p, self.rho_x).map_err(|e| Error::Config(format!("true counts: {e}")))?;
        let (rtp, rtn) = self.misspec.channel_rhos();
        check_icc(self.rates.tp(), rtp)
            .map_err(|e| Error::Config(format!("true-positive channel: {e}")))?;
        check_icc(1.0 - self.rates.tn(), rtn)
            .map_err(|e| Error::Config(format!("false-positive channel: {e}")))?;
        Ok(())
    }
}

fn check_icc(mean_p: f64, rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("ICC {rho} outside [0, 1)")));
    }
    if rho > 0.0 && !(mean_p > 0.0 && mean_p < 1.0) {
        return Err(Error::Domain(format!(
            "beta-binomial mean {mean_p} must lie strictly inside (0, 1) when ICC > 0"
        )));
    }
    Ok(())
}

/// Beta shape parameters with mean `p` and intra-class correlation `rho`.
pub fn beta_shapes(mean_p: f64, rho: f64) -> (f64, f64) {
    let s = (1.0 - rho) / rho;
    (mean_p * s, (1.0 - mean_p) * s)
}

/// One beta-binomial draw; `rho = 0` is an exact binomial draw.
pub fn sample_beta_binomial<R: Rng + ?Sized>(
    n_trials: u32,
    mean_p: f64,
    rho: f64,
    rng: &mut R,
) -> Result<u32> {
    check_icc(mean_p, rho)?;
    if rho == 0.0 {
        return draw_binomial(n_trials, mean_p, rng);
    }
    let (a, b) = beta_shapes(mean_p, rho);
    let q = Beta::new(a, b)
        .map_err(|e| Error::Domain(format!("beta({a}, {b}): {e}")))?
        .sample(rng);
    draw_binomial(n_trials, q, rng)
}

/// Exact beta-binomial pmf in the same parametrization.
pub fn beta_binomial_pmf(k: u32, n_trials: u32, mean_p: f64, rho: f64) -> Result<f64> {
    check_icc(mean_p, rho)?;
    if k > n_trials {
        return Ok(0.0);
    }
    let lc = ln_binomial(n_trials as u64, k as u64);
    if rho == 0.0 {
        let (k, f) = (k as f64, (n_trials - k) as f64);
        let t = |c: f64, p: f64| if c == 0.0 { 0.0 } else { c * p.ln() };
        return Ok((lc + t(k, mean_p) + t(f, 1.0 - mean_p)).exp());
    }
    // B(k + a, N - k + b) / B(a, b) as a product of O(1) ratios, which stays
    // accurate when the shapes are huge
    let (a, b) = beta_shapes(mean_p, rho);
    let s = a + b;
    let succ: f64 = (0..k).map(|i| ((a + i as f64) / (s + i as f64)).ln()).sum();
    let fail: f64 = (0..n_trials - k)
        .map(|j| ((b + j as f64) / (s + (k + j) as f64)).ln())
        .sum();
    Ok((lc + succ + fail).exp())
}

/// Analytic `(mean, variance)` of the beta-binomial count.
pub fn beta_binomial_moments(n_trials: u32, mean_p: f64, rho: f64) -> (f64, f64) {
    let n = n_trials as f64;
    (
        n * mean_p,
        n * mean_p * (1.0 - mean_p) * (1.0 + (n - 1.0) * rho),
    )
}

/// Contaminated count for a given true count under the cell's mechanism.
pub fn contaminate<R: Rng + ?Sized>(x: u32, cfg: &ScenarioConfig, rng: &mut R) -> Result<u32> {
    let (rtp, rtn) = cfg.misspec.channel_rhos();
    let tp = sample_beta_binomial(x, cfg.rates.tp(), rtp, rng)?;
    let fp = sample_beta_binomial(cfg.n_trials - x, 1.0 - cfg.rates.tn(), rtn, rng)?;
    Ok(tp + fp)
}

/// One synthetic dataset of `cfg.n` paired observations.
pub fn generate_dataset<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<PairedDataset> {
    cfg.validate()?;
    let obs = (0..cfg.n)
        .map(|_| {
            let x = sample_beta_binomial(cfg.n_trials, cfg.p, cfg.rho_x, rng)?;
            let y = contaminate(x, cfg, rng)?;
            PairedObs::new(x, y, cfg.n_trials)
        })
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(obs)
}
