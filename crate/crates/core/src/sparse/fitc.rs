use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::InducingSet;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::gp::{expand_params, KernelExpansion, OutputGradients};
use crate::kernel::{gram_unchecked, KernelParams};
use crate::linalg::Cholesky;

/// One output of a FITC model.
#[derive(Clone, Debug)]
struct FitcOutput {
    /// Predictor with `P = K_{Z̄Z̄}⁻¹ − Q⁻¹` and weights `Q⁻¹K_{Z̄Z}(Λ+σ²I)⁻¹y`.
    expansion: KernelExpansion,
    lambda_diag: DVector<f64>,
}

/// Fully independent training conditional posterior over fixed inducing
/// inputs.
#[derive(Clone, Debug)]
pub struct FitcPosterior {
    inducing: InducingSet,
    outputs: Vec<FitcOutput>,
}

impl FitcPosterior {
    pub fn fit(data: &Dataset, params: &[KernelParams], inducing: &InducingSet) -> Result<Self> {
        check_dim(data.input_dim(), inducing.dim())?;
        let params = expand_params(params, data.output_dim())?;
        let centers = Arc::new(inducing.points().to_vec());
        let mut outputs = Vec::with_capacity(params.len());
        for (d, p) in params.iter().enumerate() {
            let scale = p.lambda + p.sigma_w_sq;
            let kmm = gram_unchecked(inducing.points(), inducing.points(), p);
            let lm = Cholesky::with_jitter(&kmm, scale)?;
            let kmn = gram_unchecked(inducing.points(), data.inputs(), p);
            // V = Lm⁻¹ K_{Z̄Z}; Λ_a = k(z_a,z_a) − ‖V_a‖²
            let v = lm.solve_lower_mat(&kmn);
            let n = data.len();
            let lambda_diag =
                DVector::from_fn(n, |a, _| p.lambda - v.column(a).norm_squared());
            let dinv = DVector::from_fn(n, |a, _| 1.0 / (lambda_diag[a].max(0.0) + p.sigma_w_sq));
            if dinv.iter().any(|x| !x.is_finite()) {
                return Err(Error::input(
                    "FITC needs positive noise variance where inducing points coincide with data",
                ));
            }
            let vd = DMatrix::from_fn(v.nrows(), n, |i, a| v[(i, a)] * dinv[a]);
            let mut a_mat = &vd * v.transpose();
            for i in 0..a_mat.nrows() {
                a_mat[(i, i)] += 1.0;
            }
            let la = Cholesky::with_jitter(&crate::linalg::symmetrize(&a_mat), 1.0)?;
            // chol(Q) = Lm·La since Q = Lm A Lmᵀ
            let lq = Cholesky::from_lower(lm.l() * la.l(), lm.jitter());
            let y = data.target_column(d);
            let weights = lm.solve_upper(&la.solve(&(&vd * y)));
            outputs.push(FitcOutput {
                expansion: KernelExpansion::new(*p, centers.clone(), weights, vec![(1.0, lm), (-1.0, lq)]),
                lambda_diag,
            });
        }
        Ok(FitcPosterior {
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

    /// Diagonal training-conditional correction `Λ` for output `d`.
    pub fn lambda_diag(&self, d: usize) -> &DVector<f64> {
        &self.outputs[d].lambda_diag
    }

    pub fn weights(&self, d: usize) -> &DVector<f64> {
        &self.outputs[d].expansion.weights
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
