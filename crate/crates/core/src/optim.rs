//! Small derivative-free and quasi-Newton minimizers.
//!
//! The estimators here have between one and a few dozen parameters and no
//! analytic derivatives, so everything works from function values: a
//! Nelder-Mead simplex for the global shape of the problem, BFGS with
//! central-difference gradients to polish, and Brent's method for the
//! one-dimensional profile maximizations. Objectives may return `+inf` to
//! mark infeasible points.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, opts: Options) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let dim = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1.0 {
            step * v[i].abs()
        } else {
            step
        };
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = if worst.is_finite() {
            (worst - best).abs()
        } else {
            f64::INFINITY
        };
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.tol * (1.0 + best.abs()) && diameter <= opts.tol.sqrt() {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(v, _)| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[dim].1 {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < fr.min(simplex[dim].1) {
            simplex[dim] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let x_best = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for (vj, bj) in v.iter_mut().zip(&x_best) {
                *vj = bj + 0.5 * (*vj - bj);
            }
            *fv = eval(v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
        converged,
    }
}

/// Central-difference gradient with per-coordinate step `rel * max(1, |x_i|)`.
pub fn gradient<F>(f: &F, x: &[f64], rel: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian with explicit per-coordinate steps, symmetrized.
pub fn hessian<F>(f: &F, x: &[f64], steps: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let d = x.len();
    let f0 = f(x);
    let mut h = DMatrix::zeros(d, d);
    let mut p = x.to_vec();
    for i in 0..d {
        let hi = steps[i];
        p[i] = x[i] + hi;
        let fp = f(&p);
        p[i] = x[i] - hi;
        let fm = f(&p);
        p[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// BFGS on the inverse Hessian with finite-difference gradients and an
/// Armijo backtracking line search.
pub fn bfgs<F>(f: F, x0: &[f64], opts: Options) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    const GRAD_STEP: f64 = 1e-6;
    let d = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return Minimum {
            x: x0.to_vec(),
            value: fx,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = DVector::from_vec(gradient(&f, x.as_slice(), GRAD_STEP));
    let mut h_inv = DMatrix::<f64>::identity(d, d);
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;

    while iterations < opts.max_iter {
        if g.amax() <= opts.tol.sqrt() * (1.0 + fx.abs()) * 1e-2 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(d, d);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * t;
            let fnew = f(xn.as_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // no descent along a gradient direction: at a minimum up to noise
            converged = g.amax() <= opts.tol.sqrt() * (1.0 + fx.abs());
            break;
        };
        let gn = DVector::from_vec(gradient(&f, xn.as_slice(), GRAD_STEP));
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-14 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let a = &eye - &s * yv.transpose() * rho;
            let b = &eye - &yv * s.transpose() * rho;
            h_inv = &a * &h_inv * &b + &s * s.transpose() * rho;
        }
        let df = fx - fnew;
        let step_size = s.amax();
        x = xn;
        fx = fnew;
        g = gn;
        if step_size <= opts.tol * (1.0 + x.amax()) && df <= opts.tol * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 2 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Minimum {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        converged,
    }
}

/// Simplex search followed by a quasi-Newton polish from its best vertex.
pub fn minimize<F>(f: F, x0: &[f64], opts: Options) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let nm = nelder_mead(&f, x0, 0.5, opts);
    let polished = bfgs(&f, &nm.x, opts);
    let iterations = nm.iterations + polished.iterations;
    if polished.value <= nm.value {
        Minimum {
            iterations,
            converged: polished.converged || nm.converged,
            ..polished
        }
    } else {
        Minimum {
            iterations,
            converged: nm.converged,
            ..nm
        }
    }
}

/// Brent's minimizer on `[lo, hi]`; the endpoints are also compared so a
/// boundary minimum is returned exactly.
pub fn minimize_scalar<F>(f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + if d > 0.0 { tol1 } else { -tol1 }
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    let mut best = (x, fx);
    for end in [lo, hi] {
        let fe = f(end);
        if fe <= best.1 {
            best = (end, fe);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let m = nelder_mead(
            rosenbrock,
            &[-1.2, 1.0],
            0.5,
            Options {
                max_iter: 5000,
                tol: 1e-12,
            },
        );
        assert!(m.converged);
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(m.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn bfgs_polishes_quadratic() {
        let f = |x: &[f64]| 3.0 * (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2) + x[0] * x[1];
        let m = minimize(f, &[0.0, 0.0], Options::default());
        // stationary point of the quadratic
        let det = 6.0 * 2.0 - 1.0;
        let x0 = (12.0 * 2.0 - 1.0 * -2.0) / det;
        let x1 = (6.0 * -2.0 - 1.0 * 12.0) / det;
        assert!(m.converged);
        assert_abs_diff_eq!(m.x[0], x0, epsilon = 1e-5);
        assert_abs_diff_eq!(m.x[1], x1, epsilon = 1e-5);
    }

    #[test]
    fn hessian_exact_on_quadratic() {
        let f = |x: &[f64]| 2.5 * x[0] * x[0] - 1.5 * x[0] * x[1] + 4.0 * x[1] * x[1] + x[0];
        let h = hessian(&f, &[0.3, 0.7], &[1e-4, 1e-4]);
        assert_abs_diff_eq!(h[(0, 0)], 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(h[(0, 1)], -1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(h[(1, 0)], -1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(h[(1, 1)], 8.0, epsilon = 1e-6);
    }

    #[test]
    fn scalar_minimizer_interior_and_boundary() {
        let (x, _) = minimize_scalar(|t| (t - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-7);
        let (x, fx) = minimize_scalar(|t| -t, 0.0, 1.0, 1e-10);
        assert_eq!((x, fx), (1.0, -1.0));
    }

    #[test]
    fn logistic_round_trip() {
        for p in [1e-9, 0.2, 0.5, 0.98, 1.0 - 1e-9] {
            assert_abs_diff_eq!(logistic(logit(p)), p, epsilon = 1e-12);
        }
        assert_eq!(logistic(800.0), 1.0);
        assert_eq!(logistic(-800.0), 0.0);
    }
}
