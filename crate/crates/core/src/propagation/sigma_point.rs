use nalgebra::{DMatrix, DVector};

use super::linearized::point_moments;
use super::{OutputMoments, Propagator};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{is_all_zero, psd_sqrt};
use crate::model::Regressor;

/// Unscented weights for `2n+1` points; covariance weights equal the mean
/// weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPointScheme {
    pub lambda_mm: f64,
    pub n_z: usize,
    pub wm: Vec<f64>,
    pub wv: Vec<f64>,
    /// Add the weighted average of `Σ(z̄_j)` instead of `Σ(μ*)`. Off by
    /// default; the plain form misses `E[Σ(z)] − Σ(μ*)` when the latent
    /// variance curves strongly.
    pub average_latent: bool,
}

impl SigmaPointScheme {
    /// `lambda_mm` defaults to `3 − n_z`.
    pub fn new(n_z: usize, lambda_mm: Option<f64>) -> Result<Self> {
        let lambda_mm = lambda_mm.unwrap_or(3.0 - n_z as f64);
        let denom = n_z as f64 + lambda_mm;
        if !(denom > 0.0) || !lambda_mm.is_finite() {
            return Err(Error::input(format!("sigma-point spread needs n_z + lambda_mm > 0, got {denom}")));
        }
        let mut wm = vec![1.0 / (2.0 * denom); 2 * n_z + 1];
        wm[0] = lambda_mm / denom;
        Ok(SigmaPointScheme {
            lambda_mm,
            n_z,
            wv: wm.clone(),
            wm,
            average_latent: false,
        })
    }
}

/// Points `μ, μ ± √(n+λ)·s_j` where `s_j` are the columns of a square root of
/// the covariance.
#[derive(Clone, Debug)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub wm: Vec<f64>,
    pub wv: Vec<f64>,
}

pub fn sigma_points(mean: &DVector<f64>, cov: &DMatrix<f64>, scheme: &SigmaPointScheme) -> Result<SigmaPoints> {
    let n = mean.len();
    check_dim(scheme.n_z, n)?;
    check_dim(n, cov.nrows())?;
    let root = psd_sqrt(cov)?;
    let spread = (n as f64 + scheme.lambda_mm).sqrt();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for j in 0..n {
        points.push(mean + root.column(j) * spread);
    }
    for j in 0..n {
        points.push(mean - root.column(j) * spread);
    }
    Ok(SigmaPoints {
        points,
        wm: scheme.wm.clone(),
        wv: scheme.wv.clone(),
    })
}

/// Mean `Σ W^m_j μ(z̄_j)`; covariance `Σ W^v_j (μ_j − μ_sp)(μ_j − μ_sp)ᵀ` plus
/// the latent variance at the input mean on the diagonal (or its weighted
/// average over the points, see [`SigmaPointScheme::average_latent`]).
pub fn sigma_point_moments(
    model: &dyn Regressor,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    scheme: &SigmaPointScheme,
) -> Result<OutputMoments> {
    check_dim(model.input_dim(), mean.len())?;
    let sp = sigma_points(mean, cov, scheme)?;
    if is_all_zero(cov) {
        return Ok(point_moments(model, mean));
    }
    let preds: Vec<(DVector<f64>, DVector<f64>)> = sp.points.iter().map(|z| model.predict(z)).collect();
    let outs: Vec<&DVector<f64>> = preds.iter().map(|(m, _)| m).collect();
    let n_d = model.output_dim();
    let mut mu = DVector::zeros(n_d);
    for (w, o) in sp.wm.iter().zip(&outs) {
        mu += *o * *w;
    }
    let mut out_cov = DMatrix::zeros(n_d, n_d);
    let mut cross = DMatrix::zeros(mean.len(), n_d);
    for ((w, o), z) in sp.wv.iter().zip(&outs).zip(&sp.points) {
        let d = *o - &mu;
        out_cov += &d * d.transpose() * *w;
        cross += (z - mean) * d.transpose() * *w;
    }
    let var = if scheme.average_latent {
        preds.iter().zip(&sp.wm).fold(DVector::zeros(n_d), |acc, ((_, v), w)| acc + v * *w)
    } else {
        preds[0].1.clone()
    };
    for a in 0..n_d {
        out_cov[(a, a)] += var[a];
    }
    Ok(OutputMoments {
        mean: mu,
        cov: crate::linalg::symmetrize(&out_cov),
        cross,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SigmaPoint {
    pub lambda_mm: Option<f64>,
    pub average_latent: bool,
}

impl SigmaPoint {
    fn scheme(&self, n_z: usize) -> Result<SigmaPointScheme> {
        let mut s = SigmaPointScheme::new(n_z, self.lambda_mm)?;
        s.average_latent = self.average_latent;
        Ok(s)
    }
}

impl Propagator for SigmaPoint {
    fn name(&self) -> &'static str {
        "sigma-point"
    }

    fn onestep(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<OutputMoments> {
        let scheme = self.scheme(mean.len())?;
        sigma_point_moments(model, mean, cov, &scheme)
    }

    fn mean_only(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
        if is_all_zero(cov) {
            return Ok(model.predict_mean(mean));
        }
        let scheme = SigmaPointScheme::new(mean.len(), self.lambda_mm)?;
        let sp = sigma_points(mean, cov, &scheme)?;
        let mut mu = DVector::zeros(model.output_dim());
        for (w, z) in sp.wm.iter().zip(&sp.points) {
            mu += model.predict_mean(z) * *w;
        }
        Ok(mu)
    }
}
