//! Least-squares estimation from the linear conditional mean
//! `E[Y_j | X_j] = pi_tp X_j + (1 - pi_tn)(N_j - X_j)`.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PairedDataset, RateParams};

/// Relative size of the smaller R diagonal below which the design is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Unclamped `(beta_tp, beta_tn)` with `beta_tn = 1 - pi_tn`.
    pub beta: [f64; 2],
    /// Rates clamped into `[0, 1]^2`.
    pub rates: RateParams,
    /// Plug-in `Var[beta_hat | X]` evaluated at the clamped rates.
    pub cond_var: Matrix2<f64>,
    /// `(pi_tp(1 - pi_tp), pi_tn(1 - pi_tn))` at the clamped rates.
    pub alpha: [f64; 2],
}

impl RegressionFit {
    /// Standard errors of `(pi_tp, pi_tn)`; `Var[1 - beta_tn] = Var[beta_tn]`.
    pub fn se(&self) -> [f64; 2] {
        [
            self.cond_var[(0, 0)].max(0.0).sqrt(),
            self.cond_var[(1, 1)].max(0.0).sqrt(),
        ]
    }
}

fn design(data: &PairedDataset) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.len();
    let d = DMatrix::from_fn(n, 2, |i, j| {
        let o = data.obs()[i];
        if j == 0 {
            o.x as f64
        } else {
            (o.n_trials - o.x) as f64
        }
    });
    let y = DVector::from_iterator(n, data.obs().iter().map(|o| o.y as f64));
    (d, y)
}

/// Upper-triangular factor of the thin QR of the design, with a rank check.
fn r_factor(d: &DMatrix<f64>) -> Result<(DMatrix<f64>, Matrix2<f64>)> {
    if d.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "least squares needs at least 2 observations, got {}",
            d.nrows()
        )));
    }
    let qr = d.clone().qr();
    let r = qr.r();
    let r = Matrix2::new(r[(0, 0)], r[(0, 1)], 0.0, r[(1, 1)]);
    let scale = d.column(0).norm().max(d.column(1).norm());
    if scale == 0.0 || r[(0, 0)].abs() <= RANK_TOL * scale || r[(1, 1)].abs() <= RANK_TOL * scale {
        return Err(Error::RankDeficient(
            "columns X and N - X are collinear or zero".into(),
        ));
    }
    Ok((qr.q(), r))
}

fn upper_inverse(r: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(
        1.0 / r[(0, 0)],
        -r[(0, 1)] / (r[(0, 0)] * r[(1, 1)]),
        0.0,
        1.0 / r[(1, 1)],
    )
}

/// `(D'D)^{-1} D' diag(D alpha) D (D'D)^{-1}` using `(D'D)^{-1} = R^{-1} R^{-T}`.
fn sandwich(d: &DMatrix<f64>, r: &Matrix2<f64>, alpha: [f64; 2]) -> Matrix2<f64> {
    let mut meat = Matrix2::zeros();
    for i in 0..d.nrows() {
        let (a, b) = (d[(i, 0)], d[(i, 1)]);
        let w = a * alpha[0] + b * alpha[1];
        meat[(0, 0)] += w * a * a;
        meat[(0, 1)] += w * a * b;
        meat[(1, 1)] += w * b * b;
    }
    meat[(1, 0)] = meat[(0, 1)];
    let ri = upper_inverse(r);
    let bread = ri * ri.transpose();
    let v = bread * meat * bread;
    (v + v.transpose()) * 0.5
}

fn alpha_of(rates: RateParams) -> [f64; 2] {
    [
        rates.tp() * (1.0 - rates.tp()),
        rates.tn() * (1.0 - rates.tn()),
    ]
}

fn finish(d: &DMatrix<f64>, r: &Matrix2<f64>, beta: [f64; 2]) -> RegressionFit {
    let rates = RateParams::clamped(beta[0], 1.0 - beta[1], 0.0, 1.0);
    let alpha = alpha_of(rates);
    RegressionFit {
        beta,
        rates,
        cond_var: sandwich(d, r, alpha),
        alpha,
    }
}

/// OLS fit of `Y` on the design `[X, N - X]` via a thin QR factorization.
pub fn fit_ols(data: &PairedDataset) -> Result<RegressionFit> {
    let (d, y) = design(data);
    let (q, r) = r_factor(&d)?;
    let qty = q.transpose() * y;
    let b1 = qty[1] / r[(1, 1)];
    let b0 = (qty[0] - r[(0, 1)] * b1) / r[(0, 0)];
    Ok(finish(&d, &r, [b0, b1]))
}

/// Moment form of the OLS estimator when every observation shares `N`.
pub fn ols_closed_form_equal_n(data: &PairedDataset) -> Result<RegressionFit> {
    let n_trials = common_trials(data)?;
    let nf = n_trials as f64;
    let n = data.len() as f64;
    let xbar = data.obs().iter().map(|o| o.x as f64).sum::<f64>() / n;
    let ybar = data.obs().iter().map(|o| o.y as f64).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for o in data.obs() {
        let dx = o.x as f64 - xbar;
        sxx += dx * dx;
        sxy += dx * (o.y as f64 - ybar);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let slope = sxy / sxx;
    let beta = [
        ybar / nf + slope * (1.0 - xbar / nf),
        ybar / nf - (xbar / nf) * slope,
    ];
    let (d, _) = design(data);
    let (_, r) = r_factor(&d)?;
    Ok(finish(&d, &r, beta))
}

fn common_trials(data: &PairedDataset) -> Result<u32> {
    let mut keys = data.groups().keys();
    let first = *keys.next().ok_or(Error::EmptyDataset)?;
    match keys.next() {
        Some(&other) => Err(Error::HeterogeneousTrials(first, other)),
        None => Ok(first),
    }
}

/// Plug-in conditional variance of `beta_hat` at the given rates.
pub fn regression_plugin_variance(data: &PairedDataset, rates: RateParams) -> Result<Matrix2<f64>> {
    let (d, _) = design(data);
    let (_, r) = r_factor(&d)?;
    Ok(sandwich(&d, &r, alpha_of(rates)))
}
