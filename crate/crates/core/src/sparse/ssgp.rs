use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::gp::{expand_params, OutputGradients};
use crate::kernel::KernelParams;
use crate::linalg::Cholesky;

/// `[cos(2πs₁ᵀz), …, cos(2πs_{M/2}ᵀz), sin(2πs₁ᵀz), …, sin(2πs_{M/2}ᵀz)]`
pub fn ssgp_features(z: &DVector<f64>, freqs: &[DVector<f64>]) -> DVector<f64> {
    let h = freqs.len();
    let mut phi = DVector::zeros(2 * h);
    for (r, s) in freqs.iter().enumerate() {
        let arg = 2.0 * PI * s.dot(z);
        phi[r] = arg.cos();
        phi[h + r] = arg.sin();
    }
    phi
}

#[derive(Clone, Debug)]
struct SsgpOutput {
    params: KernelParams,
    freqs: Vec<DVector<f64>>,
    prior_weight_var: f64,
    post_mean: DVector<f64>,
    /// Cholesky factor of the posterior precision of the weights.
    precision: Cholesky,
}

/// Bayesian trigonometric regression with frequencies drawn once from the
/// kernel's spectral density.
#[derive(Clone, Debug)]
pub struct SsgpModel {
    n_features: usize,
    seed: u64,
    input_dim: usize,
    outputs: Vec<SsgpOutput>,
}

/// Standard-normal directions shared by all outputs; each output rescales
/// them by `1/(2π√η)`.
fn base_directions(m_half: usize, dim: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m_half)
        .map(|_| DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng)))
        .collect()
}

impl SsgpModel {
    pub fn fit(data: &Dataset, params: &[KernelParams], n_features: usize, seed: u64) -> Result<Self> {
        let params = expand_params(params, data.output_dim())?;
        Self::build(Some(data), &params, data.input_dim(), n_features, seed)
    }

    /// Model conditioned on no data: the weight prior itself.
    pub fn prior(params: &[KernelParams], input_dim: usize, n_features: usize, seed: u64) -> Result<Self> {
        for p in params {
            p.validate()?;
        }
        Self::build(None, params, input_dim, n_features, seed)
    }

    fn build(
        data: Option<&Dataset>,
        params: &[KernelParams],
        input_dim: usize,
        n_features: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_features < 2 || n_features % 2 != 0 {
            return Err(Error::input(format!(
                "number of features must be even and ≥ 2, got {n_features}"
            )));
        }
        let base = base_directions(n_features / 2, input_dim, seed);
        let mut outputs = Vec::with_capacity(params.len());
        for (d, p) in params.iter().enumerate() {
            let scale = 1.0 / (2.0 * PI * p.eta.sqrt());
            let freqs: Vec<DVector<f64>> = base.iter().map(|w| w * scale).collect();
            let prior_weight_var = 2.0 * p.lambda / n_features as f64;
            let mut precision = DMatrix::<f64>::identity(n_features, n_features) / prior_weight_var;
            let mut rhs = DVector::zeros(n_features);
            if let Some(data) = data {
                if !(p.sigma_w_sq > 0.0) {
                    return Err(Error::input("SSGP requires a positive noise variance"));
                }
                let y = data.target_column(d);
                let n = data.len();
                let phi = DMatrix::from_fn(n, n_features, |_, _| 0.0);
                let mut phi = phi;
                for (i, z) in data.inputs().iter().enumerate() {
                    phi.set_row(i, &ssgp_features(z, &freqs).transpose());
                }
                precision += phi.transpose() * &phi / p.sigma_w_sq;
                rhs = phi.transpose() * y / p.sigma_w_sq;
            }
            let chol = Cholesky::with_jitter(&precision, 1.0 / prior_weight_var)?;
            let post_mean = chol.solve(&rhs);
            outputs.push(SsgpOutput {
                params: *p,
                freqs,
                prior_weight_var,
                post_mean,
                precision: chol,
            });
        }
        Ok(SsgpModel {
            n_features,
            seed,
            input_dim,
            outputs,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn params(&self) -> Vec<KernelParams> {
        self.outputs.iter().map(|o| o.params).collect()
    }

    pub fn freqs(&self, d: usize) -> &[DVector<f64>] {
        &self.outputs[d].freqs
    }

    pub fn prior_weight_var(&self, d: usize) -> f64 {
        self.outputs[d].prior_weight_var
    }

    pub fn posterior_mean(&self, d: usize) -> &DVector<f64> {
        &self.outputs[d].post_mean
    }

    pub fn posterior_cov(&self, d: usize) -> DMatrix<f64> {
        self.outputs[d].precision.inverse()
    }

    /// `φ(a)ᵀ(2λ/M)φ(b)`: the finite-feature kernel under the weight prior.
    pub fn implied_kernel(&self, d: usize, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let o = &self.outputs[d];
        ssgp_features(a, &o.freqs).dot(&ssgp_features(b, &o.freqs)) * o.prior_weight_var
    }

    pub(crate) fn mean_var_output(&self, d: usize, z: &DVector<f64>) -> (f64, f64) {
        let o = &self.outputs[d];
        let phi = ssgp_features(z, &o.freqs);
        let mean = phi.dot(&o.post_mean);
        let var = o.precision.solve_lower(&phi).norm_squared();
        (mean, var)
    }

    pub(crate) fn mean_output(&self, d: usize, z: &DVector<f64>) -> f64 {
        let o = &self.outputs[d];
        ssgp_features(z, &o.freqs).dot(&o.post_mean)
    }

    /// Per output: `(mean, latent variance, observation variance)`.
    pub fn predict(&self, z: &DVector<f64>) -> Result<Vec<(f64, f64, f64)>> {
        check_dim(self.input_dim, z.len())?;
        Ok((0..self.output_dim())
            .map(|d| {
                let (m, v) = self.mean_var_output(d, z);
                (m, v, v + self.outputs[d].params.sigma_w_sq)
            })
            .collect())
    }

    pub fn predict_gradients(&self, z: &DVector<f64>) -> Result<Vec<OutputGradients>> {
        check_dim(self.input_dim, z.len())?;
        Ok((0..self.output_dim()).map(|d| self.gradients_output(d, z)).collect())
    }

    pub(crate) fn gradients_output(&self, d: usize, z: &DVector<f64>) -> OutputGradients {
        let o = &self.outputs[d];
        let h = o.freqs.len();
        let n_z = z.len();
        let phi = ssgp_features(z, &o.freqs);
        // rows: ∇φ_k
        let mut jac = DMatrix::<f64>::zeros(2 * h, n_z);
        for (r, s) in o.freqs.iter().enumerate() {
            let two_pi_s = s * (2.0 * PI);
            jac.row_mut(r).copy_from(&(two_pi_s.transpose() * -phi[h + r]));
            jac.row_mut(h + r).copy_from(&(two_pi_s.transpose() * phi[r]));
        }
        let c_phi = o.precision.solve(&phi);
        let mean = phi.dot(&o.post_mean);
        let var = phi.dot(&c_phi);
        let dmean = jac.transpose() * &o.post_mean;
        let dvar = jac.transpose() * &c_phi * 2.0;
        let c_jac = o.precision.solve_mat(&jac);
        let mut hess = jac.transpose() * c_jac;
        // ∇²φ_k = −4π² s sᵀ φ_k for both the cos and sin blocks
        for (r, s) in o.freqs.iter().enumerate() {
            let coef = c_phi[r] * phi[r] + c_phi[h + r] * phi[h + r];
            hess -= (s * s.transpose()) * (4.0 * PI * PI * coef);
        }
        OutputGradients {
            mean,
            var,
            dmean,
            dvar,
            d2var: crate::linalg::symmetrize(&hess) * 2.0,
        }
    }
}
