use nalgebra::{DMatrix, DVector};

use super::{OutputMoments, Propagator};
use crate::error::{check_dim, Result};
use crate::linalg::is_all_zero;
use crate::model::Regressor;

/// Point evaluation at the input mean; input uncertainty is ignored.
#[derive(Clone, Copy, Debug)]
pub struct Deterministic;

pub(crate) fn point_moments(model: &dyn Regressor, mean: &DVector<f64>) -> OutputMoments {
    let (mu, var) = model.predict(mean);
    OutputMoments {
        cov: DMatrix::from_diagonal(&var),
        cross: DMatrix::zeros(mean.len(), mu.len()),
        mean: mu,
    }
}

impl Propagator for Deterministic {
    fn name(&self) -> &'static str {
        "deterministic"
    }

    fn onestep(&self, model: &dyn Regressor, mean: &DVector<f64>, _cov: &DMatrix<f64>) -> Result<OutputMoments> {
        check_dim(model.input_dim(), mean.len())?;
        Ok(point_moments(model, mean))
    }

    fn mean_only(&self, model: &dyn Regressor, mean: &DVector<f64>, _cov: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(model.predict_mean(mean))
    }
}

/// First-order Taylor expansion of the mean around the input mean, with an
/// optional second-order curvature term on the variance.
#[derive(Clone, Copy, Debug)]
pub struct Linearized {
    pub order: u8,
}

impl Propagator for Linearized {
    fn name(&self) -> &'static str {
        "linearized"
    }

    fn onestep(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<OutputMoments> {
        linearized_moments(model, mean, cov, self.order)
    }

    fn mean_only(&self, model: &dyn Regressor, mean: &DVector<f64>, _cov: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(model.predict_mean(mean))
    }
}

/// Mean `μ(m)`; covariance `Gᵀ S G + diag(Σ(m))` with `G = [∇μ_1 … ∇μ_d]`,
/// plus `½ tr(∇²Σ_a S)` on the diagonal for `order == 2`. The
/// cross-covariance with the input is `S G`.
pub fn linearized_moments(
    model: &dyn Regressor,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    order: u8,
) -> Result<OutputMoments> {
    check_dim(model.input_dim(), mean.len())?;
    check_dim(mean.len(), cov.nrows())?;
    if is_all_zero(cov) {
        return Ok(point_moments(model, mean));
    }
    let grads = model.predict_gradients(mean);
    let n_d = grads.len();
    let g = DMatrix::from_fn(mean.len(), n_d, |i, a| grads[a].dmean[i]);
    let cross = cov * &g;
    let mut out_cov = crate::linalg::symmetrize(&(g.transpose() * &cross));
    for (a, ga) in grads.iter().enumerate() {
        let mut v = ga.var;
        if order >= 2 {
            v = (v + 0.5 * (&ga.d2var * cov).trace()).max(0.0);
        }
        out_cov[(a, a)] += v;
    }
    Ok(OutputMoments {
        mean: DVector::from_fn(n_d, |a, _| grads[a].mean),
        cov: out_cov,
        cross,
    })
}
