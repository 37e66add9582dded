use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{simulate_step, NoiseStream, PlantModel};
use crate::error::{check_dim, Error, Result};
use crate::linalg::matrix_from_nested;
use crate::mpc::{inverse_normal_cdf, AffineConstraint, ControlStep, MpcConfig, MpcController, SolveStatus};

/// Anything that maps the measured state to an input.
pub trait Controller {
    fn step(&mut self, x: &DVector<f64>) -> Result<ControlStep>;
}

impl Controller for MpcController {
    fn step(&mut self, x: &DVector<f64>) -> Result<ControlStep> {
        MpcController::step(self, x)
    }
}

/// What a closed-loop run is scored against: untightened constraints and a
/// quadratic stage cost.
#[derive(Clone, Debug)]
pub struct Monitor {
    pub constraints: Vec<AffineConstraint>,
    pub x_ref: DVector<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Monitor {
    pub fn from_mpc(cfg: &MpcConfig) -> Result<Self> {
        Ok(Monitor {
            constraints: cfg.constraints.clone(),
            x_ref: DVector::from_column_slice(&cfg.x_ref),
            q: matrix_from_nested(&cfg.q)?,
            r: matrix_from_nested(&cfg.r)?,
        })
    }

    /// Whether the realized transition `x → x⁺` under `u` breaks each
    /// constraint. State-only constraints are checked on `x⁺`, the others on
    /// `(x, u)`.
    pub fn violations(&self, x: &DVector<f64>, u: &DVector<f64>, next: &DVector<f64>) -> Vec<bool> {
        self.constraints
            .iter()
            .map(|c| {
                let a = DVector::from_column_slice(&c.a);
                let value = if c.is_state_only() {
                    a.dot(next) + c.c
                } else {
                    a.dot(x) + DVector::from_column_slice(&c.b).dot(u) + c.c
                };
                value > 0.0
            })
            .collect()
    }

    pub fn stage_cost(&self, u: &DVector<f64>, next: &DVector<f64>) -> f64 {
        let e = next - &self.x_ref;
        e.dot(&(&self.q * &e)) + u.dot(&(&self.r * u))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub seed: u64,
    /// `steps + 1` states.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `steps × n_constraints`.
    pub violations: Vec<Vec<bool>>,
    pub stage_costs: Vec<f64>,
    /// Steps whose solve reported infeasibility.
    pub infeasible_steps: Vec<usize>,
    pub solver_iterations: Vec<usize>,
    pub solver_status: Vec<SolveStatus>,
}

impl SimResult {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    /// `step,x_i..,u_i..,cost,violated,status,iterations`
    pub fn to_csv(&self) -> String {
        let n_x = self.states.first().map_or(0, |x| x.len());
        let n_u = self.inputs.first().map_or(0, |u| u.len());
        let mut s = String::from("step");
        for i in 0..n_x {
            s.push_str(&format!(",x_{i}"));
        }
        for i in 0..n_u {
            s.push_str(&format!(",u_{i}"));
        }
        s.push_str(",cost,violated,status,iterations\n");
        for k in 0..=self.steps() {
            s.push_str(&k.to_string());
            for v in self.states[k].iter() {
                s.push_str(&format!(",{v:e}"));
            }
            if k < self.steps() {
                for v in self.inputs[k].iter() {
                    s.push_str(&format!(",{v:e}"));
                }
                let violated = self.violations[k].iter().filter(|b| **b).count();
                s.push_str(&format!(
                    ",{:e},{violated},{},{}\n",
                    self.stage_costs[k],
                    self.solver_status[k].as_str(),
                    self.solver_iterations[k]
                ));
            } else {
                s.push_str(&",".repeat(n_u));
                s.push_str(",,,,\n");
            }
        }
        s
    }
}

/// Alternates `controller.step` and the true plant with a seeded noise
/// stream. Solver infeasibility is recorded; plant divergence is fatal.
pub fn run_closed_loop(
    plant: &dyn PlantModel,
    controller: &mut dyn Controller,
    monitor: &Monitor,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
) -> Result<SimResult> {
    if steps == 0 {
        return Err(Error::input("an episode needs at least one step"));
    }
    check_dim(plant.state_dim(), x0.len())?;
    let mut noise = NoiseStream::new(&plant.sigma_v(), seed)?;
    let mut res = SimResult {
        seed,
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(steps),
        violations: Vec::with_capacity(steps),
        stage_costs: Vec::with_capacity(steps),
        infeasible_steps: Vec::new(),
        solver_iterations: Vec::with_capacity(steps),
        solver_status: Vec::with_capacity(steps),
    };
    for k in 0..steps {
        let x = res.states[k].clone();
        let act = controller.step(&x)?;
        let next = simulate_step(plant, &x, &act.u, &noise.draw()).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { step: k + 1 },
            e => e,
        })?;
        if act.flagged {
            res.infeasible_steps.push(k);
        }
        res.violations.push(monitor.violations(&x, &act.u, &next));
        res.stage_costs.push(monitor.stage_cost(&act.u, &next));
        res.solver_iterations.push(act.iterations);
        res.solver_status.push(act.status);
        res.inputs.push(act.u);
        res.states.push(next);
    }
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViolationStat {
    pub violations: usize,
    pub total: usize,
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = inverse_normal_cdf(0.975).expect("valid probability");
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Pooled per-constraint violation frequency over all steps of all episodes.
pub fn empirical_violation_rate(results: &[SimResult]) -> Result<Vec<ViolationStat>> {
    let first = results.first().ok_or_else(|| Error::input("no episodes"))?;
    let n_c = first.violations.first().map_or(0, |v| v.len());
    let mut counts = vec![0usize; n_c];
    let mut total = 0;
    for r in results {
        for row in &r.violations {
            check_dim(n_c, row.len())?;
            for (j, v) in row.iter().enumerate() {
                counts[j] += *v as usize;
            }
        }
        total += r.violations.len();
    }
    Ok(counts
        .into_iter()
        .map(|k| {
            let (wilson_lo, wilson_hi) = wilson_interval(k, total);
            ViolationStat {
                violations: k,
                total,
                rate: if total == 0 { 0.0 } else { k as f64 / total as f64 },
                wilson_lo,
                wilson_hi,
            }
        })
        .collect())
}
