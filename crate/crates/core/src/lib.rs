//! Gaussian-process residual dynamics, uncertainty propagation and
//! chance-constrained model predictive control.
//!
//! The crate is organised around three families of interchangeable
//! strategies, each reachable by name through a registry:
//!
//! * regression models ([`model::ModelRegistry`]): exact GP, subset of data,
//!   FITC, VFE and sparse-spectrum GPs, all behind [`model::Regressor`];
//! * one-step propagation methods ([`propagation::PropagatorRegistry`]):
//!   deterministic, linearized, exact moment matching, sigma points and Monte
//!   Carlo, all behind [`propagation::Propagator`];
//! * plants ([`plant::PlantRegistry`]): the scalar and pendulum benchmarks.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod optim;
pub mod plant;
pub mod propagation;
pub mod sparse;

pub use data::Dataset;
pub use error::{Error, Result};
pub use kernel::KernelParams;
pub use model::{ModelRegistry, Regressor};
pub use propagation::{GaussianBelief, PropagationMethod, Propagator, PropagatorRegistry};
