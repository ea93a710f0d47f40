//! Uniform handle over the three rate estimators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm;
use crate::mle;
use crate::model::{PairedDataset, RateParams};
use crate::regression;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Mle,
    Ols,
    Gmm,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Mle, Estimator::Ols, Estimator::Gmm];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Mle => "mle",
            Estimator::Ols => "ols",
            Estimator::Gmm => "gmm",
        }
    }

    /// Point estimate with the estimator's own plug-in variances.
    ///
    /// A fit that does not converge is reported as an error here so that
    /// resampling and simulation code can count it as a failure.
    pub fn fit(&self, data: &PairedDataset) -> Result<EstimatorFit> {
        match self {
            Estimator::Mle => {
                let fit = mle::fit_mle(data, None, mle::DEFAULT_TOL)?;
                if !fit.converged {
                    return Err(Error::NotConverged {
                        iterations: fit.iterations,
                    });
                }
                let plugin_var = fit.se.map(|[a, b]| [a * a, b * b]);
                Ok(EstimatorFit {
                    rates: fit.rates,
                    plugin_var,
                })
            }
            Estimator::Ols => {
                let fit = regression::fit_ols(data)?;
                let v = fit.cond_var;
                Ok(EstimatorFit {
                    rates: fit.rates,
                    plugin_var: Some([v[(0, 0)], v[(1, 1)]]),
                })
            }
            Estimator::Gmm => {
                let fit = gmm::fit_gmm_auto(data)?;
                if !fit.converged {
                    return Err(Error::NotConverged {
                        iterations: fit.iterations,
                    });
                }
                let plugin_var = fit
                    .rate_variances()
                    .filter(|v| v.iter().all(|x| x.is_finite() && *x >= 0.0));
                Ok(EstimatorFit {
                    rates: fit.rates,
                    plugin_var,
                })
            }
        }
    }

    pub fn fit_rates(&self, data: &PairedDataset) -> Result<RateParams> {
        self.fit(data).map(|f| f.rates)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFit {
    pub rates: RateParams,
    /// Plug-in variances of `(pi_tp, pi_tn)`, when defined.
    pub plugin_var: Option<[f64; 2]>,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mle" => Ok(Estimator::Mle),
            "ols" | "regression" => Ok(Estimator::Ols),
            "gmm" => Ok(Estimator::Gmm),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}
