//! Evaluating a GP at Gaussian-distributed inputs and rolling beliefs
//! forward over a horizon.
//!
//! Every method implements [`Propagator`]; [`PropagatorRegistry`] maps the
//! config name (`deterministic`, `linearized`, `moment-matching`,
//! `sigma-point`, `monte-carlo`) to a factory.

mod belief;
mod linearized;
mod moment_match;
mod monte_carlo;
mod robust;
mod rollout;
mod sigma_point;

use std::collections::BTreeMap;
use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use belief::{BeliefDoc, GaussianBelief};
pub use linearized::{linearized_moments, Deterministic, Linearized};
pub use moment_match::{moment_match, MomentMatching};
pub use monte_carlo::{mc_onestep, mc_rollout, McResult, MonteCarlo};
pub use robust::{robust_onestep_halfwidth, RobustBoundParams, SpreadConvention};
pub use rollout::{rollout, rollout_csv, rollout_means};
pub use sigma_point::{sigma_point_moments, sigma_points, SigmaPoint, SigmaPointScheme, SigmaPoints};

use crate::error::{check_dim, Error, Result};
use crate::model::Regressor;

/// Gaussian approximation of the GP output at a random input.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputMoments {
    /// `n_d`
    pub mean: DVector<f64>,
    /// `n_d × n_d`
    pub cov: DMatrix<f64>,
    /// `Cov(z*, g)`, `n_z × n_d`.
    pub cross: DMatrix<f64>,
}

impl OutputMoments {
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

pub trait Propagator: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn onestep(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<OutputMoments>;

    /// Output mean only; overridden where it is much cheaper than the full
    /// moments.
    fn mean_only(&self, model: &dyn Regressor, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.onestep(model, mean, cov)?.mean)
    }

    fn supports(&self, _model: &dyn Regressor) -> bool {
        true
    }

    /// Sampling-based methods cannot be used inside deterministic rollouts.
    fn is_sampling(&self) -> bool {
        false
    }
}

/// Config-level method selection: a registry name plus the knobs the method
/// understands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationMethod {
    pub name: String,
    /// Taylor order of the variance expansion (`linearized` only; 1 or 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u8>,
    /// Sigma-point spread; defaults to `3 − n_z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_mm: Option<f64>,
    /// Sigma-point variant averaging the latent variance over the points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_latent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PropagationMethod {
    fn named(name: &str) -> Self {
        PropagationMethod {
            name: name.to_string(),
            order: None,
            lambda_mm: None,
            average_latent: None,
            n_samples: None,
            seed: None,
        }
    }

    pub fn deterministic() -> Self {
        Self::named("deterministic")
    }

    pub fn linearized(order: u8) -> Self {
        PropagationMethod {
            order: Some(order),
            ..Self::named("linearized")
        }
    }

    pub fn moment_matching() -> Self {
        Self::named("moment-matching")
    }

    pub fn sigma_point(lambda_mm: Option<f64>) -> Self {
        PropagationMethod {
            lambda_mm,
            ..Self::named("sigma-point")
        }
    }

    pub fn monte_carlo(n_samples: usize, seed: u64) -> Self {
        PropagationMethod {
            n_samples: Some(n_samples),
            seed: Some(seed),
            ..Self::named("monte-carlo")
        }
    }

    /// Builds the propagator through the default registry.
    pub fn build(&self) -> Result<Box<dyn Propagator>> {
        PropagatorRegistry::default().create(self)
    }
}

pub type PropagatorFactory = fn(&PropagationMethod) -> Result<Box<dyn Propagator>>;

pub struct PropagatorRegistry {
    factories: BTreeMap<&'static str, PropagatorFactory>,
}

impl Default for PropagatorRegistry {
    fn default() -> Self {
        let mut r = PropagatorRegistry {
            factories: BTreeMap::new(),
        };
        r.register("deterministic", |_| Ok(Box::new(Deterministic)));
        r.register("linearized", |m| {
            let order = m.order.unwrap_or(1);
            if order != 1 && order != 2 {
                return Err(Error::input(format!("linearization order must be 1 or 2, got {order}")));
            }
            Ok(Box::new(Linearized { order }))
        });
        r.register("moment-matching", |_| Ok(Box::new(MomentMatching)));
        r.register("sigma-point", |m| {
            Ok(Box::new(SigmaPoint {
                lambda_mm: m.lambda_mm,
                average_latent: m.average_latent.unwrap_or(false),
            }))
        });
        r.register("monte-carlo", |m| {
            let n = m
                .n_samples
                .ok_or_else(|| Error::input("monte-carlo needs `n_samples`"))?;
            if n < 2 {
                return Err(Error::input("monte-carlo needs at least 2 samples"));
            }
            Ok(Box::new(MonteCarlo {
                n_samples: n,
                seed: m.seed.unwrap_or(0),
            }))
        });
        r
    }
}

impl PropagatorRegistry {
    pub fn register(&mut self, name: &'static str, factory: PropagatorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, method: &PropagationMethod) -> Result<Box<dyn Propagator>> {
        let f = self.factories.get(method.name.as_str()).ok_or_else(|| Error::Unknown {
            kind: "propagation method",
            name: method.name.clone(),
        })?;
        f(method)
    }
}

/// Checked one-step propagation of an input belief through `model`.
pub fn propagate_onestep(
    model: &dyn Regressor,
    belief: &GaussianBelief,
    method: &dyn Propagator,
) -> Result<OutputMoments> {
    check_dim(model.input_dim(), belief.dim())?;
    if !method.supports(model) {
        return Err(Error::Capability {
            method: method.name().to_string(),
            model: model.name().to_string(),
        });
    }
    dispatch(method, model, belief.mean(), belief.cov())
}

/// Point-mass inputs bypass the method so every method returns the
/// deterministic prediction bit for bit. The sampler is included: with a
/// degenerate input the output law is exactly the Gaussian at the mean.
pub(crate) fn dispatch(
    method: &dyn Propagator,
    model: &dyn Regressor,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<OutputMoments> {
    if crate::linalg::is_all_zero(cov) {
        return Ok(linearized::point_moments(model, mean));
    }
    method.onestep(model, mean, cov)
}
