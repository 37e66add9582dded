use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::Regressor;

/// Constants of the one-step error bound: RKHS confidence scale and the
/// Lipschitz constants of `∇g_nom` and `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustBoundParams {
    pub beta_h: f64,
    pub l_grad_gnom: f64,
    pub l_g: f64,
}

impl RobustBoundParams {
    pub fn new(beta_h: f64, l_grad_gnom: f64, l_g: f64) -> Result<Self> {
        let ok = beta_h.is_finite()
            && beta_h > 0.0
            && l_grad_gnom.is_finite()
            && l_grad_gnom >= 0.0
            && l_g.is_finite()
            && l_g >= 0.0;
        if !ok {
            return Err(Error::input("robust bound needs beta_h > 0 and finite nonnegative Lipschitz constants"));
        }
        Ok(RobustBoundParams { beta_h, l_grad_gnom, l_g })
    }
}

/// Which predictive spread multiplies `beta_h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadConvention {
    #[default]
    StdDev,
    Variance,
}

/// Per-output half-width `β·s(z̄) + (L_∇/2)‖z−z̄‖² + L_g‖z−z̄‖`, where `s` is
/// the posterior standard deviation (or variance) at `z̄`.
pub fn robust_onestep_halfwidth(
    model: &dyn Regressor,
    z: &DVector<f64>,
    zbar: &DVector<f64>,
    rb: &RobustBoundParams,
    convention: SpreadConvention,
) -> Result<DVector<f64>> {
    check_dim(model.input_dim(), z.len())?;
    check_dim(model.input_dim(), zbar.len())?;
    let r = (z - zbar).norm();
    let (_, var) = model.predict(zbar);
    Ok(var.map(|v| {
        let spread = match convention {
            SpreadConvention::StdDev => v.max(0.0).sqrt(),
            SpreadConvention::Variance => v.max(0.0),
        };
        rb.beta_h * spread + 0.5 * rb.l_grad_gnom * r * r + rb.l_g * r
    }))
}
