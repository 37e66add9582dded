//! Box-constrained quasi-Newton minimizer (projected BFGS with Armijo
//! backtracking). Used for hyperparameter training and as the inner solver
//! of the MPC augmented-Lagrangian loop.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖x − P(x − ∇f)‖∞` falls below this.
    pub grad_tol: f64,
    pub armijo: f64,
    /// Curvature constant: an accepted step is extended while the slope at
    /// the trial point is still below `wolfe * slope`.
    pub wolfe: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-7,
            armijo: 1e-4,
            wolfe: 0.9,
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BfgsStatus {
    Converged,
    MaxIter,
    /// No decrease along the steepest projected direction.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub proj_grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: BfgsStatus,
    /// Final inverse-Hessian approximation, reusable as a warm start.
    pub inv_hessian: DMatrix<f64>,
}

pub fn project(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))
}

pub fn projected_gradient_norm(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> f64 {
    (x - project(&(x - g), lo, hi)).amax()
}

/// Minimizes `f` over the box `[lo, hi]`; `f` returns value and gradient.
pub fn minimize_box<F>(
    f: F,
    x0: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    opts: &BfgsOptions,
) -> Result<BfgsResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    minimize_box_warm(f, x0, lo, hi, opts, None)
}

/// [`minimize_box`] starting from a given inverse-Hessian approximation.
pub fn minimize_box_warm<F>(
    mut f: F,
    x0: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    opts: &BfgsOptions,
    inv_hessian: Option<&DMatrix<f64>>,
) -> Result<BfgsResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = project(x0, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut evals = 1;
    let (mut h, mut fresh) = match inv_hessian {
        Some(h0) if h0.nrows() == n && h0.ncols() == n => (h0.clone(), false),
        _ => (DMatrix::<f64>::identity(n, n), true),
    };
    let mut iter = 0;
    let mut status = BfgsStatus::MaxIter;

    while iter < opts.max_iter {
        let pg = projected_gradient_norm(&x, &g, lo, hi);
        if pg <= opts.grad_tol {
            status = BfgsStatus::Converged;
            break;
        }
        iter += 1;

        // variables pinned at a bound with the gradient pushing outward
        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0))
            .collect();
        let mut d = direction(&h, &g, &active);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = direction(&h, &g, &active);
            slope = g.dot(&d);
        }
        let mut step = if fresh {
            (1.0 / d.amax().max(1e-300)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let xt = project(&(&x + &d * step), lo, hi);
            let (ft, gt) = f(&xt)?;
            evals += 1;
            let decrease = g.dot(&(&xt - &x));
            if ft.is_finite() && ft <= fx + opts.armijo * decrease.min(0.0) && ft <= fx {
                accepted = Some((xt, ft, gt));
                break;
            }
            step *= 0.5;
        }
        // a full step that is still steep means the model is too timid
        // (typical after an inverse-Hessian scaling from a stiff direction)
        if let Some((xa, fa, ga)) = accepted.as_mut() {
            for _ in 0..opts.max_backtracks {
                if ga.dot(&d) >= opts.wolfe * slope {
                    break;
                }
                let xt = project(&(&x + &d * (2.0 * step)), lo, hi);
                if (&xt - &*xa).amax() == 0.0 {
                    break;
                }
                let (ft, gt) = f(&xt)?;
                evals += 1;
                let decrease = g.dot(&(&xt - &x));
                if !(ft.is_finite() && ft <= fx + opts.armijo * decrease.min(0.0) && ft < *fa) {
                    break;
                }
                step *= 2.0;
                *xa = xt;
                *fa = ft;
                *ga = gt;
            }
        }

        let Some((xn, fn_, gn)) = accepted else {
            if fresh {
                status = BfgsStatus::Stalled;
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };

        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                // scale the initial inverse Hessian
                let scale = sy / y.norm_squared();
                h = DMatrix::identity(n, n) * scale;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let stalled = s.amax() == 0.0;
        x = xn;
        fx = fn_;
        g = gn;
        if stalled {
            status = BfgsStatus::Stalled;
            break;
        }
    }

    let proj_grad_norm = projected_gradient_norm(&x, &g, lo, hi);
    if proj_grad_norm <= opts.grad_tol {
        status = BfgsStatus::Converged;
    }
    Ok(BfgsResult {
        x,
        f: fx,
        grad: g,
        proj_grad_norm,
        iterations: iter,
        evaluations: evals,
        status,
        inv_hessian: h,
    })
}

fn direction(h: &DMatrix<f64>, g: &DVector<f64>, active: &[bool]) -> DVector<f64> {
    let n = g.len();
    let gf = DVector::from_fn(n, |i, _| if active[i] { 0.0 } else { g[i] });
    let mut d = -(h * gf);
    for i in 0..n {
        if active[i] {
            d[i] = 0.0;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = DVector::from_vec(vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ]);
        Ok((f, g))
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let inf = DVector::from_element(2, f64::INFINITY);
        let r = minimize_box(
            rosenbrock,
            &DVector::from_vec(vec![-1.2, 1.0]),
            &(-&inf),
            &inf,
            &BfgsOptions {
                max_iter: 500,
                grad_tol: 1e-9,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.status, BfgsStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bound_active_quadratic() {
        // min (x−2)² + (y+1)² on [0,1]×[0,1] → (1, 0)
        let f = |x: &DVector<f64>| {
            Ok((
                (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2),
                DVector::from_vec(vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 1.0)]),
            ))
        };
        let r = minimize_box(
            f,
            &DVector::from_vec(vec![0.5, 0.5]),
            &DVector::zeros(2),
            &DVector::from_element(2, 1.0),
            &BfgsOptions::default(),
        )
        .unwrap();
        assert_eq!(r.status, BfgsStatus::Converged);
        assert_eq!(r.x, DVector::from_vec(vec![1.0, 0.0]));
    }
}
