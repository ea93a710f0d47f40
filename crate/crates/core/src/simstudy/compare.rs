use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::{self, MleFit};
use crate::model::{PairedDataset, RateParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Pooled,
    GroupSpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    /// Number of free parameters.
    pub k: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
}

impl ModelScore {
    pub fn new(k: usize, loglik: f64, n: usize) -> Self {
        Self {
            k,
            loglik,
            aic: aic(k, loglik),
            bic: bic(k, loglik, n),
        }
    }
}

pub fn aic(k: usize, loglik: f64) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

pub fn bic(k: usize, loglik: f64, n: usize) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * loglik
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: String,
    pub n_obs: usize,
    pub rates: RateParams,
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_obs: usize,
    pub n_groups: usize,
    pub pooled: ModelScore,
    pub pooled_rates: RateParams,
    /// Absent for single-group data.
    pub group_specific: Option<ModelScore>,
    pub group_fits: Vec<GroupFit>,
    pub preferred_by_aic: Model,
    pub preferred_by_bic: Model,
}

fn fit(data: &PairedDataset) -> Result<MleFit> {
    mle::fit_mle(data, None, mle::DEFAULT_TOL)
}

/// Pooled MLE (two rates shared by all groups) against one rate pair per
/// group, scored by AIC and BIC over the total number of observations.
pub fn compare_models_aic_bic(data: &PairedDataset) -> Result<Comparison> {
    let n = data.len();
    let pooled_fit = fit(data)?;
    let pooled = ModelScore::new(2, pooled_fit.loglik, n);
    let groups = data.label_groups();

    if groups.len() < 2 {
        return Ok(Comparison {
            n_obs: n,
            n_groups: groups.len(),
            pooled,
            pooled_rates: pooled_fit.rates,
            group_specific: None,
            group_fits: Vec::new(),
            preferred_by_aic: Model::Pooled,
            preferred_by_bic: Model::Pooled,
        });
    }

    let group_fits = groups
        .iter()
        .map(|(label, idx)| {
            let f = fit(&data.subset(idx)?)?;
            Ok(GroupFit {
                group: label.clone(),
                n_obs: idx.len(),
                rates: f.rates,
                loglik: f.loglik,
                converged: f.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ll: f64 = group_fits.iter().map(|g| g.loglik).sum();
    if !ll.is_finite() {
        return Err(Error::Numerical(
            "group-specific log-likelihood is not finite".into(),
        ));
    }
    let specific = ModelScore::new(2 * group_fits.len(), ll, n);
    let pick = |a: f64, b: f64| {
        if b < a {
            Model::GroupSpecific
        } else {
            Model::Pooled
        }
    };
    Ok(Comparison {
        n_obs: n,
        n_groups: group_fits.len(),
        pooled,
        pooled_rates: pooled_fit.rates,
        preferred_by_aic: pick(pooled.aic, specific.aic),
        preferred_by_bic: pick(pooled.bic, specific.bic),
        group_specific: Some(specific),
        group_fits,
    })
}

/// Shares of observations with `|y - x|` equal to 0, equal to 1, and above 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub exact: f64,
    pub one_off: f64,
    pub more_than_one_off: f64,
}

pub fn agreement_summary(data: &PairedDataset) -> Result<AgreementSummary> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = [0usize; 3];
    for o in data.obs() {
        counts[o.x.abs_diff(o.y).min(2) as usize] += 1;
    }
    let n = data.len() as f64;
    Ok(AgreementSummary {
        exact: counts[0] as f64 / n,
        one_off: counts[1] as f64 / n,
        more_than_one_off: counts[2] as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn information_criteria_arithmetic() {
        assert!((aic(2, -422.6) - 849.2).abs() < 1e-9);
        assert!((bic(2, -10.0, 100) - (2.0 * 100f64.ln() + 20.0)).abs() < 1e-12);
    }

    #[test]
    fn agreement_examples() {
        let ds =
            PairedDataset::from_triples(&[(5, 5, 10), (5, 6, 10), (5, 9, 10), (5, 4, 10)]).unwrap();
        let s = agreement_summary(&ds).unwrap();
        assert_eq!((s.exact, s.one_off, s.more_than_one_off), (0.25, 0.5, 0.25));
        let same = PairedDataset::from_triples(&[(3, 3, 10), (7, 7, 10)]).unwrap();
        let s = agreement_summary(&same).unwrap();
        assert_eq!((s.exact, s.one_off, s.more_than_one_off), (1.0, 0.0, 0.0));
    }

    #[test]
    fn single_group_prefers_pooled() {
        let ds =
            PairedDataset::from_triples(&[(5, 5, 10), (6, 7, 10), (8, 7, 10), (3, 4, 10)]).unwrap();
        let c = compare_models_aic_bic(&ds).unwrap();
        assert!(c.group_specific.is_none());
        assert_eq!(c.preferred_by_aic, Model::Pooled);
        assert_eq!(c.pooled.k, 2);
    }
}
