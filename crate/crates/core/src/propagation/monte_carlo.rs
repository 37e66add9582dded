use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GaussianBelief, OutputMoments, Propagator};
use crate::dynamics::{stack_input, ResidualDynamics};
use crate::error::{check_dim, Error, Result};
use crate::linalg::psd_sqrt;
use crate::model::Regressor;

#[derive(Clone, Debug)]
pub struct McResult {
    /// Unbiased sample moments.
    pub moments: OutputMoments,
    /// One output draw per input draw.
    pub samples: Vec<DVector<f64>>,
}

/// Samples `z ~ N(m, S)` then `g ~ N(μ(z), diag Σ(z))`; deterministic for a
/// given seed.
pub fn mc_onestep(model: &dyn Regressor, belief: &GaussianBelief, n_samples: usize, seed: u64) -> Result<McResult> {
    check_dim(model.input_dim(), belief.dim())?;
    if n_samples < 2 {
        return Err(Error::input("monte-carlo needs at least 2 samples"));
    }
    let n_z = belief.dim();
    let n_d = model.output_dim();
    let root = psd_sqrt(belief.cov())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut inputs = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let eps = DVector::from_fn(n_z, |_, _| StandardNormal.sample(&mut rng));
        let z = belief.mean() + &root * eps;
        let (mu, var) = model.predict(&z);
        let g = DVector::from_fn(n_d, |a, _| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            mu[a] + var[a].sqrt() * xi
        });
        samples.push(g);
        inputs.push(z);
    }

    let nf = n_samples as f64;
    let mean = samples.iter().fold(DVector::zeros(n_d), |acc, g| acc + g) / nf;
    let z_mean = inputs.iter().fold(DVector::zeros(n_z), |acc, z| acc + z) / nf;
    let mut cov = DMatrix::zeros(n_d, n_d);
    let mut cross = DMatrix::zeros(n_z, n_d);
    for (g, z) in samples.iter().zip(&inputs) {
        let dg = g - &mean;
        cov += &dg * dg.transpose();
        cross += (z - &z_mean) * dg.transpose();
    }
    cov /= nf - 1.0;
    cross /= nf - 1.0;
    Ok(McResult {
        moments: OutputMoments { mean, cov, cross },
        samples,
    })
}

/// Particle ensemble of the closed-form-free model: `x₀ ~ N(m, S)`, then per
/// step `g ~ N(μ(z), diag Σ(z))` and `v ~ N(0, Σ_v)`. Returns `T+1` rows of
/// `n_particles` states each.
pub fn mc_rollout(
    dynamics: &ResidualDynamics,
    model: &dyn Regressor,
    x0: &GaussianBelief,
    inputs: &[DVector<f64>],
    n_particles: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    check_dim(dynamics.state_dim() + dynamics.input_dim(), model.input_dim())?;
    check_dim(dynamics.residual_dim(), model.output_dim())?;
    check_dim(dynamics.state_dim(), x0.dim())?;
    if n_particles < 2 {
        return Err(Error::input("monte-carlo needs at least 2 samples"));
    }
    let n_x = dynamics.state_dim();
    let n_d = model.output_dim();
    let x_root = psd_sqrt(x0.cov())?;
    let v_root = psd_sqrt(&dynamics.sigma_v)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize| -> DVector<f64> { DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)) };

    let first: Vec<_> = (0..n_particles).map(|_| x0.mean() + &x_root * normal(n_x)).collect();
    let mut out = vec![first];
    for (i, u) in inputs.iter().enumerate() {
        check_dim(dynamics.input_dim(), u.len())?;
        let mut next = Vec::with_capacity(n_particles);
        for x in &out[i] {
            let (mu, var) = model.predict(&stack_input(x, u));
            let xi = normal(n_d);
            let g = DVector::from_fn(n_d, |a, _| mu[a] + var[a].max(0.0).sqrt() * xi[a]);
            let x_next = dynamics.nominal.eval(x, u) + &dynamics.b_d * g + &v_root * normal(n_x);
            if x_next.iter().any(|c| !c.is_finite()) {
                return Err(Error::Divergence { step: i + 1 });
            }
            next.push(x_next);
        }
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct MonteCarlo {
    pub n_samples: usize,
    pub seed: u64,
}

impl Propagator for MonteCarlo {
    fn name(&self) -> &'static str {
        "monte-carlo"
    }

    fn onestep(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<OutputMoments> {
        let belief = GaussianBelief::new(mean.clone(), cov.clone())?;
        Ok(mc_onestep(model, &belief, self.n_samples, self.seed)?.moments)
    }

    fn is_sampling(&self) -> bool {
        true
    }
}
