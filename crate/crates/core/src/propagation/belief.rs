use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{matrix_from_nested, matrix_to_nested, symmetrize};

/// `N(mean, cov)` with a symmetric positive semidefinite covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Symmetrizes `cov` and rejects it if it is clearly asymmetric or has an
    /// eigenvalue below `−1e−10·trace`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("belief contains non-finite entries"));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(Error::input("belief covariance is not symmetric"));
        }
        let cov = symmetrize(&cov);
        if n > 0 {
            let trace = cov.trace().abs();
            let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
            if min_eig < -1e-10 * trace.max(f64::MIN_POSITIVE) {
                return Err(Error::input(format!(
                    "belief covariance is not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        GaussianBelief {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    /// Skips validation; used for beliefs produced internally by rollouts.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianBelief { mean, cov }
    }

    pub fn from_nested(mean: &[f64], cov: &[Vec<f64>]) -> Result<Self> {
        let cov = if cov.is_empty() && !mean.is_empty() {
            DMatrix::zeros(mean.len(), mean.len())
        } else {
            matrix_from_nested(cov)?
        };
        check_dim(mean.len(), cov.nrows())?;
        Self::new(DVector::from_column_slice(mean), cov)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_point_mass(&self) -> bool {
        crate::linalg::is_all_zero(&self.cov)
    }

    pub fn to_doc(&self) -> BeliefDoc {
        BeliefDoc {
            mean: self.mean.iter().copied().collect(),
            cov: matrix_to_nested(&self.cov),
        }
    }
}

/// Serialized belief: `mean` and a row-major `cov` (empty means zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefDoc {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub cov: Vec<Vec<f64>>,
}

impl TryFrom<&BeliefDoc> for GaussianBelief {
    type Error = Error;

    fn try_from(d: &BeliefDoc) -> Result<Self> {
        GaussianBelief::from_nested(&d.mean, &d.cov)
    }
}
