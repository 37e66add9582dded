use nalgebra::{DMatrix, DVector};

use super::linearized::point_moments;
use super::{OutputMoments, Propagator};
use crate::error::{check_dim, Error, Result};
use crate::gp::{ExactGp, KernelExpansion};
use crate::linalg::{is_all_zero, psd_sqrt, Cholesky};
use crate::model::Regressor;

/// Closed-form Gaussian moments of an exact squared-exponential GP at a
/// Gaussian input. Other models are rejected.
#[derive(Clone, Copy, Debug)]
pub struct MomentMatching;

impl Propagator for MomentMatching {
    fn name(&self) -> &'static str {
        "moment-matching"
    }

    fn supports(&self, model: &dyn Regressor) -> bool {
        model.as_exact().is_some()
    }

    fn onestep(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<OutputMoments> {
        let gp = model.as_exact().ok_or_else(|| Error::Capability {
            method: self.name().to_string(),
            model: model.name().to_string(),
        })?;
        moment_match(gp, mean, cov)
    }

    fn mean_only(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
        let gp = model.as_exact().ok_or_else(|| Error::Capability {
            method: self.name().to_string(),
            model: model.name().to_string(),
        })?;
        check_dim(gp.input_dim(), mean.len())?;
        if is_all_zero(cov) {
            return Ok(model.predict_mean(mean));
        }
        let base = InputContext::new(cov, gp.expansion(0).params().eta)?;
        let mut out = DVector::zeros(gp.output_dim());
        for d in 0..gp.output_dim() {
            let e = gp.expansion(d);
            out[d] = base.for_eta(cov, e.params().eta)?.l_vec(e, mean).dot(e.weights());
        }
        Ok(out)
    }
}

/// Factorizations of `S + ηI` and `S + ηI/2` together with the determinant
/// prefactors `|I + S/η|^{-1/2}` and `|I + 2S/η|^{-1/2}`.
#[derive(Clone)]
struct InputContext {
    eta: f64,
    a1: Cholesky,
    c1: f64,
    a2: Cholesky,
    c2: f64,
}

impl InputContext {
    fn new(cov: &DMatrix<f64>, eta: f64) -> Result<Self> {
        let n = cov.nrows();
        let shifted = |s: f64| {
            let mut a = crate::linalg::symmetrize(cov);
            for i in 0..n {
                a[(i, i)] += s;
            }
            a
        };
        let a1 = Cholesky::new(&shifted(eta)).ok_or_else(|| Error::input("input covariance is not positive semidefinite"))?;
        let a2 = Cholesky::new(&shifted(0.5 * eta)).ok_or_else(|| Error::input("input covariance is not positive semidefinite"))?;
        let nf = n as f64;
        let c1 = (0.5 * (nf * eta.ln() - a1.log_det())).exp();
        let c2 = (0.5 * (nf * (0.5 * eta).ln() - a2.log_det())).exp();
        Ok(InputContext { eta, a1, c1, a2, c2 })
    }

    fn for_eta(&self, cov: &DMatrix<f64>, eta: f64) -> Result<std::borrow::Cow<'_, InputContext>> {
        if eta == self.eta {
            Ok(std::borrow::Cow::Borrowed(self))
        } else {
            Ok(std::borrow::Cow::Owned(InputContext::new(cov, eta)?))
        }
    }

    /// `l_i = E[k(z, z_i)]`
    fn l_vec(&self, out: &KernelExpansion, m: &DVector<f64>) -> DVector<f64> {
        let lambda = out.params().lambda;
        DVector::from_iterator(
            out.centers().len(),
            out.centers().iter().map(|zi| {
                let d = m - zi;
                lambda * self.c1 * (-0.5 * self.a1.solve_lower(&d).norm_squared()).exp()
            }),
        )
    }

    /// `L_ij = E[k(z, z_i) k(z, z_j)]`
    fn l_mat(&self, out: &KernelExpansion, m: &DVector<f64>) -> DMatrix<f64> {
        let lambda = out.params().lambda;
        let z = out.centers();
        let n = z.len();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let gap = (&z[i] - &z[j]).norm_squared();
                let e = m - (&z[i] + &z[j]) * 0.5;
                let v = lambda * lambda
                    * (-gap / (4.0 * self.eta)).exp()
                    * self.c2
                    * (-0.5 * self.a2.solve_lower(&e).norm_squared()).exp();
                l[(i, j)] = v;
                l[(j, i)] = v;
            }
        }
        l
    }
}

/// Exact mean and variance of each output under `z ~ N(m, S)`:
///
/// * mean `βᵀl`
/// * variance `λ − tr((K+σ²I)⁻¹L) + βᵀLβ − (βᵀl)²`, i.e. `E[Σ(z)] + Var[μ(z)]`
/// * cross-covariance `Cov(z, μ(z)) = S(S+ηI)⁻¹ Σ_i β_i l_i (z_i − m)`
///
/// Outputs are treated as independent (diagonal output covariance).
pub fn moment_match(gp: &ExactGp, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<OutputMoments> {
    check_dim(gp.input_dim(), mean.len())?;
    check_dim(mean.len(), cov.nrows())?;
    check_dim(mean.len(), cov.ncols())?;
    psd_sqrt(cov)?;
    if is_all_zero(cov) {
        return Ok(point_moments(gp, mean));
    }
    let n_d = gp.output_dim();
    let n_z = mean.len();
    let mut out_mean = DVector::zeros(n_d);
    let mut out_cov = DMatrix::zeros(n_d, n_d);
    let mut cross = DMatrix::zeros(n_z, n_d);
    let base = InputContext::new(cov, gp.expansion(0).params().eta)?;
    for d in 0..n_d {
        let out = gp.expansion(d);
        let p = out.params();
        let ctx = base.for_eta(cov, p.eta)?;
        let beta = out.weights();
        let l = ctx.l_vec(out, mean);
        let big_l = ctx.l_mat(out, mean);
        let mu = beta.dot(&l);
        let k_inv = gp.cholesky(d).inverse();
        let trace = k_inv.component_mul(&big_l).sum();
        let var = p.lambda - trace + beta.dot(&(&big_l * beta)) - mu * mu;
        out_mean[d] = mu;
        out_cov[(d, d)] = var.max(0.0);

        let mut acc = DVector::zeros(n_z);
        for (i, zi) in out.centers().iter().enumerate() {
            acc += (zi - mean) * (beta[i] * l[i]);
        }
        let col = cov * ctx.a1.solve(&acc);
        cross.set_column(d, &col);
    }
    Ok(OutputMoments {
        mean: out_mean,
        cov: out_cov,
        cross,
    })
}
