use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{dispatch, GaussianBelief, Propagator};
use crate::dynamics::{pad_cov, stack_input, ResidualDynamics};
use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;
use crate::model::Regressor;

pub(crate) fn check_rollout(
    dynamics: &ResidualDynamics,
    model: &dyn Regressor,
    method: &dyn Propagator,
) -> Result<()> {
    check_dim(dynamics.state_dim() + dynamics.input_dim(), model.input_dim())?;
    check_dim(dynamics.residual_dim(), model.output_dim())?;
    if method.is_sampling() {
        return Err(Error::input(format!(
            "`{}` cannot be used in a rollout; sample episodes instead",
            method.name()
        )));
    }
    if !method.supports(model) {
        return Err(Error::Capability {
            method: method.name().to_string(),
            model: model.name().to_string(),
        });
    }
    Ok(())
}

/// Propagates the state belief over the input sequence; returns `T+1`
/// beliefs starting with `x0`.
///
/// With `J = ∂g_nom/∂x`, `C` the state rows of the method's
/// input/output cross-covariance and `V` its output covariance:
///
/// `Σ⁺ = JΣJᵀ + J C B_dᵀ + B_d Cᵀ Jᵀ + B_d V B_dᵀ + Σ_v`.
///
/// For the linearized method this is `AΣAᵀ + B_d Σ_GP B_dᵀ + Σ_v` with `A`
/// the Jacobian of `g_nom + B_d μ_GP`.
pub fn rollout(
    dynamics: &ResidualDynamics,
    model: &dyn Regressor,
    x0: &GaussianBelief,
    inputs: &[DVector<f64>],
    method: &dyn Propagator,
) -> Result<Vec<GaussianBelief>> {
    check_rollout(dynamics, model, method)?;
    check_dim(dynamics.state_dim(), x0.dim())?;
    let n_x = dynamics.state_dim();
    let n_u = dynamics.input_dim();
    let b_d = &dynamics.b_d;
    let noise = &dynamics.sigma_v;
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(x0.clone());
    for (i, u) in inputs.iter().enumerate() {
        check_dim(n_u, u.len())?;
        let cur = &out[i];
        let (mu, sigma) = (cur.mean(), cur.cov());
        let z = stack_input(mu, u);
        let om = dispatch(method, model, &z, &pad_cov(sigma, n_u))?;
        let jac = dynamics.nominal.jac_x(mu, u);
        let mean = dynamics.nominal.eval(mu, u) + b_d * &om.mean;
        let c = om.cross.rows(0, n_x);
        let jcb = &jac * c * b_d.transpose();
        let cov = &jac * sigma * jac.transpose() + &jcb + jcb.transpose() + b_d * &om.cov * b_d.transpose() + noise;
        let cov = symmetrize(&cov);
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        out.push(GaussianBelief::from_parts(mean, cov));
    }
    Ok(out)
}

/// Mean recursion only, with the GP queried at `N([μ_i; u_i], blockdiag(S_i, 0))`
/// for caller-supplied state covariances `S_i` (the frozen-covariance
/// variant). `covs` must hold one matrix per input.
pub fn rollout_means(
    dynamics: &ResidualDynamics,
    model: &dyn Regressor,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    covs: &[DMatrix<f64>],
    method: &dyn Propagator,
) -> Result<Vec<DVector<f64>>> {
    check_rollout(dynamics, model, method)?;
    check_dim(dynamics.state_dim(), x0.len())?;
    check_dim(inputs.len(), covs.len())?;
    let n_u = dynamics.input_dim();
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(x0.clone());
    for (i, (u, s)) in inputs.iter().zip(covs).enumerate() {
        check_dim(n_u, u.len())?;
        let mu = &out[i];
        let z = stack_input(mu, u);
        let g = if crate::linalg::is_all_zero(s) {
            model.predict_mean(&z)
        } else {
            method.mean_only(model, &z, &pad_cov(s, n_u))?
        };
        let next = dynamics.nominal.eval(mu, u) + &dynamics.b_d * g;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        out.push(next);
    }
    Ok(out)
}

/// `step, mean_0.., cov_0_0, cov_0_1, ..` with the covariance upper triangle
/// in row-major order.
pub fn rollout_csv(beliefs: &[GaussianBelief]) -> String {
    let n = beliefs.first().map_or(0, |b| b.dim());
    let mut s = String::from("step");
    for i in 0..n {
        let _ = write!(s, ",mean_{i}");
    }
    for i in 0..n {
        for j in i..n {
            let _ = write!(s, ",cov_{i}_{j}");
        }
    }
    s.push('\n');
    for (k, b) in beliefs.iter().enumerate() {
        let _ = write!(s, "{k}");
        for v in b.mean().iter() {
            let _ = write!(s, ",{v:e}");
        }
        for i in 0..n {
            for j in i..n {
                let _ = write!(s, ",{:e}", b.cov()[(i, j)]);
            }
        }
        s.push('\n');
    }
    s
}
