use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::PlantModel;
use crate::dynamics::{LinearNominal, NominalModel};
use crate::mpc::{AffineConstraint, CovarianceMode, MpcConfig, SolverOptions};
use crate::propagation::PropagationMethod;

/// Scalar plant `x⁺ = 0.8x + u + 0.5 sin(2x) + v`, `Σ_v = 1e-4`.
#[derive(Clone, Copy, Debug, Default)]
pub struct BenchmarkA;

impl PlantModel for BenchmarkA {
    fn name(&self) -> &'static str {
        "benchmark-a"
    }

    fn nominal(&self) -> Arc<dyn NominalModel> {
        Arc::new(LinearNominal {
            a: DMatrix::from_element(1, 1, 0.8),
            b: DMatrix::from_element(1, 1, 1.0),
        })
    }

    fn b_d(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn sigma_v(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1e-4)
    }

    fn g_true(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 0.5 * (2.0 * x[0]).sin())
    }

    fn state_region(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_element(1, -1.5), DVector::from_element(1, 1.5))
    }

    fn default_mpc(&self) -> MpcConfig {
        MpcConfig {
            horizon: 15,
            x_ref: vec![0.8],
            q: vec![vec![1.0]],
            r: vec![vec![0.1]],
            q_terminal: None,
            constraints: vec![AffineConstraint::state(vec![1.0], -1.0, 0.9)],
            u_lo: vec![-2.0],
            u_hi: vec![2.0],
            covariance_mode: CovarianceMode::Propagated,
            propagation: PropagationMethod::linearized(1),
            solver: SolverOptions::default(),
        }
    }
}

/// Damped pendulum, explicit Euler with step `dt`:
/// `θ⁺ = θ + dt·ω`, `ω⁺ = ω + dt·(−sin θ − 0.1ω + u)`, plus the unmodelled
/// friction `dt·(−0.3 tanh 2ω)` on the velocity.
#[derive(Clone, Copy, Debug)]
pub struct Pendulum {
    pub dt: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum { dt: 0.05 }
    }
}

#[derive(Clone, Copy, Debug)]
struct PendulumNominal {
    dt: f64,
}

impl NominalModel for PendulumNominal {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (th, om) = (x[0], x[1]);
        DVector::from_column_slice(&[th + self.dt * om, om + self.dt * (-th.sin() - 0.1 * om + u[0])])
    }

    fn jac_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, self.dt, -self.dt * x[0].cos(), 1.0 - 0.1 * self.dt])
    }
}

impl PlantModel for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn nominal(&self) -> Arc<dyn NominalModel> {
        Arc::new(PendulumNominal { dt: self.dt })
    }

    fn b_d(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }

    fn sigma_v(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&[1e-6, 1e-5]))
    }

    fn g_true(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, -0.3 * self.dt * (2.0 * x[1]).tanh())
    }

    fn state_region(&self) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_column_slice(&[-std::f64::consts::PI, -3.0]),
            DVector::from_column_slice(&[std::f64::consts::PI, 3.0]),
        )
    }

    fn default_mpc(&self) -> MpcConfig {
        MpcConfig {
            horizon: 15,
            x_ref: vec![2.0, 0.0],
            q: vec![vec![10.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![0.1]],
            q_terminal: None,
            constraints: vec![
                AffineConstraint::state(vec![0.0, 1.0], -2.0, 0.9),
                AffineConstraint::state(vec![0.0, -1.0], -2.0, 0.9),
            ],
            u_lo: vec![-3.0],
            u_hi: vec![3.0],
            covariance_mode: CovarianceMode::Propagated,
            propagation: PropagationMethod::linearized(1),
            solver: SolverOptions::default(),
        }
    }
}
