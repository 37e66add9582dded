//! Chance-constrained MPC over a GP-augmented model: single shooting on the
//! input sequence, constraints tightened by the predicted state spread.

mod cdf;
mod controller;
mod ocp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cdf::{inverse_normal_cdf, normal_cdf, normal_pdf};
pub use controller::{ControlStep, MpcController};
pub use ocp::{solve_ocp, Ocp, OcpSolution, SolveStatus, TraceRow, WarmStart};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{matrix_from_nested, psd_sqrt, Cholesky};
use crate::propagation::{GaussianBelief, PropagationMethod};

/// `P(aᵀx + bᵀu + c ≤ 0) ≥ p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineConstraint {
    pub a: Vec<f64>,
    /// Input part; empty means a state-only constraint.
    #[serde(default)]
    pub b: Vec<f64>,
    pub c: f64,
    pub p: f64,
}

impl AffineConstraint {
    pub fn state(a: Vec<f64>, c: f64, p: f64) -> Self {
        AffineConstraint { a, b: Vec::new(), c, p }
    }

    pub fn is_state_only(&self) -> bool {
        self.b.iter().all(|v| *v == 0.0)
    }

    /// `p = 0.5` is accepted and means no tightening.
    pub fn validate(&self, n_x: usize, n_u: usize) -> Result<()> {
        check_dim(n_x, self.a.len())?;
        if !self.b.is_empty() {
            check_dim(n_u, self.b.len())?;
        }
        if !(self.p >= 0.5 && self.p < 1.0) {
            return Err(Error::input(format!("constraint probability must lie in [0.5, 1), got {}", self.p)));
        }
        if self.a.iter().chain(&self.b).all(|v| *v == 0.0) {
            return Err(Error::input("constraint has zero normal"));
        }
        if !self.c.is_finite() || self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::input("constraint has non-finite coefficients"));
        }
        Ok(())
    }

    fn input_part(&self, n_u: usize) -> DVector<f64> {
        if self.b.is_empty() {
            DVector::zeros(n_u)
        } else {
            DVector::from_column_slice(&self.b)
        }
    }
}

/// `aᵀμ + bᵀu + c + Φ⁻¹(p)·√(aᵀΣa)`; the chance constraint is taken as
/// satisfied when this is `≤ 0`.
pub fn tighten_constraint(c: &AffineConstraint, belief: &GaussianBelief, u: &DVector<f64>) -> Result<f64> {
    c.validate(belief.dim(), u.len())?;
    let a = DVector::from_column_slice(&c.a);
    let spread = a.dot(&(belief.cov() * &a)).max(0.0).sqrt();
    let nominal = a.dot(belief.mean()) + c.input_part(u.len()).dot(u) + c.c;
    Ok(nominal + inverse_normal_cdf(c.p)? * spread)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// Covariances are re-propagated for every candidate input sequence.
    #[default]
    Propagated,
    /// Covariances come from the previous solution's shifted inputs and are
    /// held fixed during the solve.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Cap on inner quasi-Newton iterations summed over all outer rounds.
    pub max_iter: usize,
    pub constraint_tol: f64,
    pub stationarity_tol: f64,
    pub fd_step: f64,
    pub initial_penalty: f64,
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 500,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-5,
            fd_step: 1e-5,
            initial_penalty: 10.0,
            max_outer: 30,
        }
    }
}

fn default_horizon() -> usize {
    15
}

fn default_method() -> PropagationMethod {
    PropagationMethod::linearized(1)
}

/// Cost `Σ_{i<T} (μ_{i+1} − x_ref)ᵀQ_i(μ_{i+1} − x_ref) + u_iᵀRu_i` where
/// `Q_i = Q` except `Q_{T−1} = Q_T`. The fixed initial state is not
/// penalized. State-only constraints act on `μ_1..μ_T`; constraints with
/// an input part act on `(μ_i, u_i)` for `i < T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub x_ref: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Defaults to `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_terminal: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub constraints: Vec<AffineConstraint>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    #[serde(default)]
    pub covariance_mode: CovarianceMode,
    #[serde(default = "default_method")]
    pub propagation: PropagationMethod,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// Validated numeric form of [`MpcConfig`].
#[derive(Clone, Debug)]
pub(crate) struct CostWeights {
    pub x_ref: DVector<f64>,
    pub q: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
}

fn psd_matrix(name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    let m = matrix_from_nested(rows)?;
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::input(format!("{name} must be {n}×{n}")));
    }
    if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::input(format!("{name} must be symmetric")));
    }
    psd_sqrt(&m).map_err(|_| Error::input(format!("{name} must be positive semidefinite")))?;
    Ok(m)
}

impl MpcConfig {
    pub(crate) fn compile(&self, n_x: usize, n_u: usize) -> Result<CostWeights> {
        if self.horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        check_dim(n_x, self.x_ref.len())?;
        let q = psd_matrix("q", &self.q, n_x)?;
        let q_terminal = match &self.q_terminal {
            Some(rows) => psd_matrix("q_terminal", rows, n_x)?,
            None => q.clone(),
        };
        let r = psd_matrix("r", &self.r, n_u)?;
        if Cholesky::new(&r).is_none() {
            return Err(Error::input("r must be positive definite"));
        }
        check_dim(n_u, self.u_lo.len())?;
        check_dim(n_u, self.u_hi.len())?;
        if self.u_lo.iter().zip(&self.u_hi).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::input("input bounds need u_lo < u_hi"));
        }
        for c in &self.constraints {
            c.validate(n_x, n_u)?;
        }
        let o = &self.solver;
        if !(o.constraint_tol > 0.0 && o.stationarity_tol > 0.0 && o.fd_step > 0.0 && o.initial_penalty > 0.0) {
            return Err(Error::input("solver tolerances, step and penalty must be positive"));
        }
        Ok(CostWeights {
            x_ref: DVector::from_column_slice(&self.x_ref),
            q,
            q_terminal,
            r,
            u_lo: DVector::from_column_slice(&self.u_lo),
            u_hi: DVector::from_column_slice(&self.u_hi),
        })
    }
}
