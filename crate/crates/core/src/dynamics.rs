//! Nominal dynamics `x⁺ = g_nom(x, u) + B_d g(x, u) + v` with a learned
//! residual `g` and process noise `v ~ N(0, Σ_v)`.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// The known part of the dynamics.
pub trait NominalModel: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `∂g_nom/∂x`; central differences unless overridden.
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut jac = DMatrix::zeros(self.state_dim(), n);
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            jac.set_column(j, &((self.eval(&xp, u) - self.eval(&xm, u)) / (2.0 * h)));
        }
        jac
    }
}

/// `x⁺ = A x + B u`
#[derive(Clone, Debug)]
pub struct LinearNominal {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearNominal {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_dim(a.nrows(), a.ncols())?;
        check_dim(a.nrows(), b.nrows())?;
        Ok(LinearNominal { a, b })
    }
}

impl NominalModel for LinearNominal {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn jac_x(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// Nominal model plus the residual injection matrix `B_d` (`n_x × n_d`)
/// and the process-noise covariance `Σ_v` (`n_x × n_x`).
#[derive(Clone, Debug)]
pub struct ResidualDynamics {
    pub nominal: Arc<dyn NominalModel>,
    pub b_d: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
}

impl ResidualDynamics {
    pub fn new(nominal: Arc<dyn NominalModel>, b_d: DMatrix<f64>, sigma_v: DMatrix<f64>) -> Result<Self> {
        check_dim(nominal.state_dim(), b_d.nrows())?;
        check_dim(b_d.nrows(), sigma_v.nrows())?;
        check_dim(b_d.nrows(), sigma_v.ncols())?;
        if (&sigma_v - sigma_v.transpose()).amax() > 1e-12 * sigma_v.amax().max(1.0) {
            return Err(Error::input("process-noise covariance is not symmetric"));
        }
        Ok(ResidualDynamics { nominal, b_d, sigma_v })
    }

    pub fn state_dim(&self) -> usize {
        self.nominal.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.nominal.input_dim()
    }

    pub fn residual_dim(&self) -> usize {
        self.b_d.ncols()
    }
}

/// GP query point `[x; u]`.
pub fn stack_input(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// `blockdiag(Σ_x, 0)` for a GP query with deterministic inputs.
pub fn pad_cov(cov_x: &DMatrix<f64>, n_u: usize) -> DMatrix<f64> {
    let n = cov_x.nrows();
    let mut s = DMatrix::zeros(n + n_u, n + n_u);
    s.view_mut((0, 0), (n, n)).copy_from(cov_x);
    s
}
