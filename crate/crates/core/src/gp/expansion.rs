use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::kernel::KernelParams;
use crate::linalg::Cholesky;

/// Predictive mean, latent variance and their input derivatives for one
/// output dimension at one query point.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGradients {
    pub mean: f64,
    pub var: f64,
    /// `∇μ(z)`
    pub dmean: DVector<f64>,
    /// `∇Σ(z)`
    pub dvar: DVector<f64>,
    /// `∇²Σ(z)`
    pub d2var: DMatrix<f64>,
}

/// A predictor of the form `μ(z) = k(z,C)ᵀw`, `Σ(z) = λ − k(z,C)ᵀ P k(z,C)`
/// where `P = Σ_s sign_s (L_s L_sᵀ)⁻¹`. Exact GPs use one factor
/// (`K + σ²I`); FITC and VFE use two over the inducing set.
#[derive(Clone, Debug)]
pub struct KernelExpansion {
    pub(crate) params: KernelParams,
    pub(crate) centers: Arc<Vec<DVector<f64>>>,
    pub(crate) weights: DVector<f64>,
    pub(crate) factors: Vec<(f64, Cholesky)>,
    /// Dense `P`, built on the first derivative query.
    dense_p: OnceLock<DMatrix<f64>>,
}

impl KernelExpansion {
    pub(crate) fn new(
        params: KernelParams,
        centers: Arc<Vec<DVector<f64>>>,
        weights: DVector<f64>,
        factors: Vec<(f64, Cholesky)>,
    ) -> Self {
        KernelExpansion {
            params,
            centers,
            weights,
            factors,
            dense_p: OnceLock::new(),
        }
    }

    fn p_matrix(&self) -> &DMatrix<f64> {
        self.dense_p.get_or_init(|| {
            let m = self.centers.len();
            let mut p = DMatrix::zeros(m, m);
            for (sign, c) in &self.factors {
                p += c.inverse() * *sign;
            }
            crate::linalg::symmetrize(&p)
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn k_vec(&self, z: &DVector<f64>) -> DVector<f64> {
        self.params.k_vec(z, &self.centers)
    }

    pub fn mean(&self, z: &DVector<f64>) -> f64 {
        self.k_vec(z).dot(&self.weights)
    }

    pub fn quad_form(&self, k: &DVector<f64>) -> f64 {
        self.factors
            .iter()
            .map(|(sign, c)| sign * c.solve_lower(k).norm_squared())
            .sum()
    }

    /// `P v`
    pub fn apply_p(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (sign, c) in &self.factors {
            out += c.solve(v) * *sign;
        }
        out
    }

    /// Mean and latent variance; the variance is floored at zero.
    pub fn mean_var(&self, z: &DVector<f64>) -> (f64, f64) {
        let k = self.k_vec(z);
        let mean = k.dot(&self.weights);
        let var = (self.params.lambda - self.quad_form(&k)).max(0.0);
        (mean, var)
    }

    pub fn gradients(&self, z: &DVector<f64>) -> OutputGradients {
        let n_z = z.len();
        let m = self.centers.len();
        let eta = self.params.eta;
        let k = self.k_vec(z);
        // rows: ∂k(z, c_i)/∂z
        let mut jac = DMatrix::<f64>::zeros(m, n_z);
        for (i, c) in self.centers.iter().enumerate() {
            let scale = -k[i] / eta;
            for j in 0..n_z {
                jac[(i, j)] = scale * (z[j] - c[j]);
            }
        }
        let p = self.p_matrix();
        let pk = p * &k;
        let mean = k.dot(&self.weights);
        let var = (self.params.lambda - k.dot(&pk)).max(0.0);
        let dmean = jac.transpose() * &self.weights;
        let dvar = jac.transpose() * &pk * -2.0;

        let mut hess = jac.transpose() * (p * &jac);
        for (i, c) in self.centers.iter().enumerate() {
            let coef = pk[i] * k[i];
            if coef == 0.0 {
                continue;
            }
            let d = z - c;
            for a in 0..n_z {
                for b in 0..n_z {
                    let delta = if a == b { 1.0 / eta } else { 0.0 };
                    hess[(a, b)] += coef * (d[a] * d[b] / (eta * eta) - delta);
                }
            }
        }
        let d2var = crate::linalg::symmetrize(&hess) * -2.0;
        OutputGradients {
            mean,
            var,
            dmean,
            dvar,
            d2var,
        }
    }
}
