//! Scalable approximations: subset of data, FITC, VFE and sparse-spectrum
//! GPs. None of these routines forms an `N×N` matrix.

mod fitc;
mod sod;
mod ssgp;
mod vfe;

pub use fitc::FitcPosterior;
pub use sod::{farthest_point_indices, subset_of_data, SubsetStrategy};
pub use ssgp::{ssgp_features, SsgpModel};
pub use vfe::VfePosterior;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Fixed inducing inputs `Z̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    points: Vec<DVector<f64>>,
}

impl InducingSet {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::input("inducing set must be nonempty"))?;
        let d = first.len();
        for p in &points {
            check_dim(d, p.len())?;
        }
        Ok(InducingSet { points })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}
