//! Ground-truth plants `x⁺ = g_nom(x, u) + B_d g_true(x, u) + v`, data
//! generation and closed-loop episodes.

mod benchmarks;
mod closed_loop;

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use benchmarks::{BenchmarkA, Pendulum};
pub use closed_loop::{
    empirical_violation_rate, run_closed_loop, wilson_interval, Controller, Monitor, SimResult, ViolationStat,
};

use crate::data::Dataset;
use crate::dynamics::{stack_input, NominalModel, ResidualDynamics};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{psd_sqrt, Cholesky};
use crate::mpc::MpcConfig;

/// A simulated system with a known nominal part and a hidden residual.
pub trait PlantModel: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    fn nominal(&self) -> Arc<dyn NominalModel>;
    /// `n_x × n_d`, full column rank.
    fn b_d(&self) -> DMatrix<f64>;
    fn sigma_v(&self) -> DMatrix<f64>;
    /// The residual the GP is meant to learn.
    fn g_true(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// Excitation and initial-state region (`lo`, `hi`).
    fn state_region(&self) -> (DVector<f64>, DVector<f64>);
    /// The plant's stock controller settings.
    fn default_mpc(&self) -> MpcConfig;

    fn state_dim(&self) -> usize {
        self.nominal().state_dim()
    }

    fn input_dim(&self) -> usize {
        self.nominal().input_dim()
    }

    fn input_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let cfg = self.default_mpc();
        (DVector::from_vec(cfg.u_lo), DVector::from_vec(cfg.u_hi))
    }

    /// Model structure handed to the controller (the residual itself is
    /// unknown to it).
    fn dynamics(&self) -> Result<ResidualDynamics> {
        ResidualDynamics::new(self.nominal(), self.b_d(), self.sigma_v())
    }
}

type PlantFactory = fn() -> Arc<dyn PlantModel>;

/// Plants by name.
pub struct PlantRegistry {
    factories: BTreeMap<&'static str, PlantFactory>,
}

impl Default for PlantRegistry {
    fn default() -> Self {
        let mut r = PlantRegistry { factories: BTreeMap::new() };
        r.register("benchmark-a", || Arc::new(BenchmarkA));
        r.register("pendulum", || Arc::new(Pendulum::default()));
        r
    }
}

impl PlantRegistry {
    pub fn register(&mut self, name: &'static str, factory: PlantFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str) -> Result<Arc<dyn PlantModel>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| Error::Unknown {
            kind: "plant",
            name: name.to_string(),
        })
    }
}

/// `(B_dᵀB_d)⁻¹B_dᵀ`
pub fn pseudo_inverse(b_d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = b_d.transpose() * b_d;
    let chol = Cholesky::new(&gram).ok_or_else(|| Error::input("B_d must have full column rank"))?;
    Ok(chol.solve_mat(&b_d.transpose()))
}

/// One step of the true plant with the supplied noise draw `v`.
pub fn simulate_step(
    plant: &dyn PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(plant.state_dim(), x.len())?;
    check_dim(plant.input_dim(), u.len())?;
    check_dim(plant.state_dim(), v.len())?;
    let next = plant.nominal().eval(x, u) + plant.b_d() * plant.g_true(x, u) + v;
    if next.iter().any(|c| !c.is_finite()) {
        return Err(Error::Divergence { step: 1 });
    }
    Ok(next)
}

/// Draws `v ~ N(0, Σ_v)` from a seeded stream.
#[derive(Debug)]
pub struct NoiseStream {
    root: DMatrix<f64>,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(sigma_v: &DMatrix<f64>, seed: u64) -> Result<Self> {
        Ok(NoiseStream {
            root: psd_sqrt(sigma_v)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn draw(&mut self) -> DVector<f64> {
        let n = self.root.nrows();
        let e = DVector::from_fn(n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        &self.root * e
    }
}

/// Uniform random inputs in the box; the state is re-drawn uniformly in the
/// region every `reset_every` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excitation {
    #[serde(default = "default_reset")]
    pub reset_every: usize,
    /// Overrides of the plant's region and input box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_hi: Option<Vec<f64>>,
}

fn default_reset() -> usize {
    1
}

impl Default for Excitation {
    fn default() -> Self {
        Excitation {
            reset_every: default_reset(),
            x_lo: None,
            x_hi: None,
            u_lo: None,
            u_hi: None,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(lo.len(), |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>())
}

fn pick(over: &Option<Vec<f64>>, default: DVector<f64>) -> Result<DVector<f64>> {
    match over {
        Some(v) => {
            check_dim(default.len(), v.len())?;
            Ok(DVector::from_column_slice(v))
        }
        None => Ok(default),
    }
}

/// Rolls the true plant under `policy` and records `z_i = [x_i; u_i]` with
/// targets `y_i = B_d†(x_{i+1} − g_nom(x_i, u_i))`.
pub fn generate_dataset(plant: &dyn PlantModel, policy: &Excitation, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::input("dataset size must be at least 1"));
    }
    if policy.reset_every == 0 {
        return Err(Error::input("reset_every must be at least 1"));
    }
    let (rx_lo, rx_hi) = plant.state_region();
    let (ru_lo, ru_hi) = plant.input_bounds();
    let x_lo = pick(&policy.x_lo, rx_lo)?;
    let x_hi = pick(&policy.x_hi, rx_hi)?;
    let u_lo = pick(&policy.u_lo, ru_lo)?;
    let u_hi = pick(&policy.u_hi, ru_hi)?;
    let pinv = pseudo_inverse(&plant.b_d())?;
    let nominal = plant.nominal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // an independent stream keeps inputs unchanged when Σ_v changes
    let mut noise = NoiseStream::new(&plant.sigma_v(), seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;

    let mut inputs = Vec::with_capacity(n);
    let mut targets = DMatrix::zeros(n, pinv.nrows());
    let mut x = uniform(&mut rng, &x_lo, &x_hi);
    for i in 0..n {
        if i > 0 && i % policy.reset_every == 0 {
            x = uniform(&mut rng, &x_lo, &x_hi);
        }
        let u = uniform(&mut rng, &u_lo, &u_hi);
        let next = simulate_step(plant, &x, &u, &noise.draw()).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { step: i + 1 },
            e => e,
        })?;
        let y = &pinv * (&next - nominal.eval(&x, &u));
        targets.set_row(i, &y.transpose());
        inputs.push(stack_input(&x, &u));
        x = next;
    }
    Dataset::new(inputs, targets)
}
