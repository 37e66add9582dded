use nalgebra::DVector;

use super::{Ocp, OcpSolution, SolveStatus, WarmStart};
use crate::error::Result;

/// What the controller applied at one time step.
#[derive(Clone, Debug)]
pub struct ControlStep {
    pub u: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub max_violation: f64,
    /// Set when the solver reported infeasibility; `u` is then the first
    /// input of the least-violating iterate found.
    pub flagged: bool,
}

/// Receding-horizon wrapper: solves, applies the first input and keeps the
/// shifted solution as the next warm start.
#[derive(Debug)]
pub struct MpcController {
    ocp: Ocp,
    warm: Option<WarmStart>,
    last: Option<OcpSolution>,
}

impl MpcController {
    pub fn new(ocp: Ocp) -> Self {
        MpcController { ocp, warm: None, last: None }
    }

    pub fn ocp(&self) -> &Ocp {
        &self.ocp
    }

    pub fn last_solution(&self) -> Option<&OcpSolution> {
        self.last.as_ref()
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.last = None;
    }

    pub fn step(&mut self, x: &DVector<f64>) -> Result<ControlStep> {
        let sol = self.ocp.solve(x, self.warm.as_ref())?;
        self.warm = Some(sol.warm_start().shifted());
        let step = ControlStep {
            u: sol.u_seq[0].clone(),
            status: sol.status,
            iterations: sol.iterations,
            objective: sol.objective,
            max_violation: sol.max_violation,
            flagged: sol.status == SolveStatus::Infeasible,
        };
        self.last = Some(sol);
        Ok(step)
    }
}
