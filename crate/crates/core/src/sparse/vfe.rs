use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::InducingSet;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::gp::{expand_params, KernelExpansion, OutputGradients};
use crate::kernel::{gram_unchecked, KernelParams};
use crate::linalg::Cholesky;

#[derive(Clone, Debug)]
struct VfeOutput {
    expansion: KernelExpansion,
    mu_q: DVector<f64>,
    sigma_q: DMatrix<f64>,
    elbo: f64,
    trace_term: f64,
}

/// Variational (Titsias) sparse posterior over fixed inducing inputs.
#[derive(Clone, Debug)]
pub struct VfePosterior {
    inducing: InducingSet,
    outputs: Vec<VfeOutput>,
}

impl VfePosterior {
    pub fn fit(data: &Dataset, params: &[KernelParams], inducing: &InducingSet) -> Result<Self> {
        check_dim(data.input_dim(), inducing.dim())?;
        let params = expand_params(params, data.output_dim())?;
        let centers = Arc::new(inducing.points().to_vec());
        let n = data.len();
        let mut outputs = Vec::with_capacity(params.len());
        for (d, p) in params.iter().enumerate() {
            if !(p.sigma_w_sq > 0.0) {
                return Err(Error::input("VFE requires a positive noise variance"));
            }
            let s2 = p.sigma_w_sq;
            let kmm = gram_unchecked(inducing.points(), inducing.points(), p);
            let lm = Cholesky::with_jitter(&kmm, p.lambda + s2)?;
            let kmn = gram_unchecked(inducing.points(), data.inputs(), p);
            let v = lm.solve_lower_mat(&kmn);
            // K̄ + σ⁻²K_{Z̄Z}K_{ZZ̄} = Lm B Lmᵀ with B = I + σ⁻²VVᵀ
            let mut b = &v * v.transpose() / s2;
            for i in 0..b.nrows() {
                b[(i, i)] += 1.0;
            }
            let lb = Cholesky::with_jitter(&crate::linalg::symmetrize(&b), 1.0)?;
            let y = data.target_column(d);
            let c = &v * &y;
            let binv_c = lb.solve(&c);
            let mu_q = lm.l() * &binv_c / s2;
            let lm_t = lm.l().transpose();
            let sigma_q = crate::linalg::symmetrize(&(lm.l() * lb.solve_mat(&lm_t)));
            let weights = lm.solve_upper(&binv_c) / s2;

            let trace_term = (n as f64 * p.lambda - v.norm_squared()) / s2;
            let log_det = n as f64 * s2.ln() + lb.log_det();
            let quad = y.norm_squared() / s2 - c.dot(&binv_c) / (s2 * s2);
            let log_gauss = -0.5 * (n as f64 * (2.0 * PI).ln() + log_det + quad);
            let elbo = log_gauss - 0.5 * trace_term;

            let lq = Cholesky::from_lower(lm.l() * lb.l(), lm.jitter());
            outputs.push(VfeOutput {
                expansion: KernelExpansion::new(*p, centers.clone(), weights, vec![(1.0, lm), (-1.0, lq)]),
                mu_q,
                sigma_q,
                elbo,
                trace_term,
            });
        }
        Ok(VfePosterior {
            inducing: inducing.clone(),
            outputs,
        })
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inducing.dim()
    }

    pub fn params(&self) -> Vec<KernelParams> {
        self.outputs.iter().map(|o| o.expansion.params).collect()
    }

    pub fn mu_q(&self, d: usize) -> &DVector<f64> {
        &self.outputs[d].mu_q
    }

    pub fn sigma_q(&self, d: usize) -> &DMatrix<f64> {
        &self.outputs[d].sigma_q
    }

    /// Evidence lower bound summed over outputs (log-evidence scale).
    pub fn elbo(&self) -> f64 {
        self.outputs.iter().map(|o| o.elbo).sum()
    }

    /// `σ⁻²·Tr(K_{ZZ} − K_{ZZ̄}K_{Z̄Z̄}⁻¹K_{Z̄Z})` for output `d`.
    pub fn trace_term(&self, d: usize) -> f64 {
        self.outputs[d].trace_term
    }

    pub(crate) fn expansion(&self, d: usize) -> &KernelExpansion {
        &self.outputs[d].expansion
    }

    /// Per output: `(mean, latent variance, observation variance)`.
    pub fn predict(&self, z: &DVector<f64>) -> Result<Vec<(f64, f64, f64)>> {
        check_dim(self.input_dim(), z.len())?;
        Ok(self
            .outputs
            .iter()
            .map(|o| {
                let (m, v) = o.expansion.mean_var(z);
                (m, v, v + o.expansion.params.sigma_w_sq)
            })
            .collect())
    }

    pub fn predict_gradients(&self, z: &DVector<f64>) -> Result<Vec<OutputGradients>> {
        check_dim(self.input_dim(), z.len())?;
        Ok(self.outputs.iter().map(|o| o.expansion.gradients(z)).collect())
    }
}
