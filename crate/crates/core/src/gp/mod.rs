//! Exact Gaussian-process regression with independent output dimensions.

mod expansion;
mod train;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use expansion::{KernelExpansion, OutputGradients};
pub use train::{nll, nll_grad, log_evidence, train_hyperparams, TrainOptions, TrainResult};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram_unchecked, KernelParams};
use crate::linalg::Cholesky;

/// Broadcasts a single parameter set to every output or checks that one set
/// per output was supplied.
pub fn expand_params(params: &[KernelParams], n_out: usize) -> Result<Vec<KernelParams>> {
    for p in params {
        p.validate()?;
    }
    match params.len() {
        1 => Ok(vec![params[0]; n_out]),
        n if n == n_out => Ok(params.to_vec()),
        n => Err(Error::input(format!(
            "expected 1 or {n_out} kernel parameter sets, got {n}"
        ))),
    }
}

/// `K(Z,Z) + σ²I`
pub(crate) fn noisy_gram(inputs: &[DVector<f64>], p: &KernelParams) -> DMatrix<f64> {
    let mut k = gram_unchecked(inputs, inputs, p);
    for i in 0..inputs.len() {
        k[(i, i)] += p.sigma_w_sq;
    }
    k
}

pub(crate) fn factor_noisy_gram(inputs: &[DVector<f64>], p: &KernelParams) -> Result<Cholesky> {
    Cholesky::with_jitter(&noisy_gram(inputs, p), p.lambda + p.sigma_w_sq)
}

/// Posterior mean `M×n_d` and one `M×M` covariance per output.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub mean: DMatrix<f64>,
    pub cov: Vec<DMatrix<f64>>,
}

/// A fitted exact GP. Immutable; [`ExactGp::append`] returns a new value.
#[derive(Clone, Debug)]
pub struct ExactGp {
    data: Dataset,
    outputs: Vec<KernelExpansion>,
}

impl ExactGp {
    pub fn fit(data: &Dataset, params: &[KernelParams]) -> Result<Self> {
        let params = expand_params(params, data.output_dim())?;
        let centers = Arc::new(data.inputs().to_vec());
        let mut outputs = Vec::with_capacity(params.len());
        // outputs sharing hyperparameters share the factorization
        let mut cache: Vec<(KernelParams, Cholesky)> = Vec::new();
        for (d, p) in params.iter().enumerate() {
            let chol = match cache.iter().find(|(q, _)| q == p) {
                Some((_, c)) => c.clone(),
                None => {
                    let c = factor_noisy_gram(data.inputs(), p)?;
                    cache.push((*p, c.clone()));
                    c
                }
            };
            let alpha = chol.solve(&data.target_column(d));
            outputs.push(KernelExpansion::new(*p, centers.clone(), alpha, vec![(1.0, chol)]));
        }
        Ok(ExactGp {
            data: data.clone(),
            outputs,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn input_dim(&self) -> usize {
        self.data.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn params(&self) -> Vec<KernelParams> {
        self.outputs.iter().map(|o| o.params).collect()
    }

    pub fn expansion(&self, d: usize) -> &KernelExpansion {
        &self.outputs[d]
    }

    pub fn alpha(&self, d: usize) -> &DVector<f64> {
        &self.outputs[d].weights
    }

    pub fn cholesky(&self, d: usize) -> &Cholesky {
        &self.outputs[d].factors[0].1
    }

    /// Largest jitter added to any output's factorization.
    pub fn jitter_used(&self) -> f64 {
        self.outputs
            .iter()
            .map(|o| o.factors[0].1.jitter())
            .fold(0.0, f64::max)
    }

    pub fn predict(&self, zs: &[DVector<f64>]) -> Result<Prediction> {
        for z in zs {
            check_dim(self.input_dim(), z.len())?;
        }
        let m = zs.len();
        let mut mean = DMatrix::zeros(m, self.output_dim());
        let mut cov = Vec::with_capacity(self.output_dim());
        for (d, out) in self.outputs.iter().enumerate() {
            let cross = gram_unchecked(self.data.inputs(), zs, &out.params);
            let mu = cross.transpose() * &out.weights;
            mean.set_column(d, &mu);
            let v = out.factors[0].1.solve_lower_mat(&cross);
            let prior = gram_unchecked(zs, zs, &out.params);
            cov.push(crate::linalg::symmetrize(&(prior - v.transpose() * v)));
        }
        Ok(Prediction { mean, cov })
    }

    /// Mean and latent variance per output at one point.
    pub fn predict_point(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim(self.input_dim(), z.len())?;
        let mut mean = DVector::zeros(self.output_dim());
        let mut var = DVector::zeros(self.output_dim());
        for (d, out) in self.outputs.iter().enumerate() {
            let (m, v) = out.mean_var(z);
            mean[d] = m;
            var[d] = v;
        }
        Ok((mean, var))
    }

    pub fn predict_gradients(&self, z: &DVector<f64>) -> Result<Vec<OutputGradients>> {
        check_dim(self.input_dim(), z.len())?;
        Ok(self.outputs.iter().map(|o| o.gradients(z)).collect())
    }

    /// Adds `(z, y)` when the largest absolute prediction error exceeds
    /// `threshold` (always when `threshold == 0`). The factor grows by one
    /// bordered row; hyperparameters are unchanged.
    pub fn append(&self, z: &DVector<f64>, y: &DVector<f64>, threshold: f64) -> Result<(ExactGp, bool)> {
        check_dim(self.input_dim(), z.len())?;
        check_dim(self.output_dim(), y.len())?;
        if !(threshold >= 0.0) {
            return Err(Error::input("append threshold must be nonnegative"));
        }
        let (mu, _) = self.predict_point(z)?;
        let err = (y - mu).amax();
        let accept = threshold == 0.0 || err > threshold;
        if !accept {
            return Ok((self.clone(), false));
        }
        let data = self.data.push(z.clone(), y)?;
        let centers = Arc::new(data.inputs().to_vec());
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for (d, out) in self.outputs.iter().enumerate() {
            let p = out.params;
            let k = p.k_vec(z, self.data.inputs());
            let chol = out.factors[0].1.extend(&k, p.lambda + p.sigma_w_sq)?;
            let alpha = chol.solve(&data.target_column(d));
            outputs.push(KernelExpansion::new(p, centers.clone(), alpha, vec![(1.0, chol)]));
        }
        Ok((ExactGp { data, outputs }, true))
    }
}
