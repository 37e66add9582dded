use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{inverse_normal_cdf, CostWeights, CovarianceMode, MpcConfig};
use crate::dynamics::ResidualDynamics;
use crate::error::{check_dim, Error, Result};
use crate::model::Regressor;
use crate::optim::{minimize_box_warm, projected_gradient_norm, BfgsOptions, BfgsStatus};
use crate::propagation::{rollout, rollout_means, GaussianBelief, Propagator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Feasible within tolerance and stationary relative to the size of
    /// the gradient terms.
    Converged,
    /// Feasible but not stationary: the budget ran out or the inner solver
    /// stalled at its finite-difference noise floor.
    MaxIter,
    /// Constraint violation above tolerance at the best iterate.
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "maxiter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// One outer (multiplier update) round of the solver.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub max_residual: f64,
    pub step_norm: f64,
}

#[derive(Clone, Debug)]
pub struct WarmStart {
    pub u_seq: Vec<DVector<f64>>,
    /// Constraint-major: `T` entries per constraint.
    pub multipliers: DVector<f64>,
    /// Quasi-Newton inverse-Hessian estimate over the flattened inputs.
    pub inv_hessian: Option<DMatrix<f64>>,
}

impl WarmStart {
    pub fn new(u_seq: Vec<DVector<f64>>) -> Self {
        WarmStart {
            u_seq,
            multipliers: DVector::zeros(0),
            inv_hessian: None,
        }
    }

    /// Drops the first stage and repeats the last one.
    pub fn shifted(&self) -> WarmStart {
        let t = self.u_seq.len();
        let mut u_seq: Vec<DVector<f64>> = self.u_seq.iter().skip(1).cloned().collect();
        if let Some(last) = self.u_seq.last() {
            u_seq.push(last.clone());
        }
        let n_c = if t == 0 { 0 } else { self.multipliers.len() / t };
        let mut multipliers = DVector::zeros(self.multipliers.len());
        for j in 0..n_c {
            for i in 0..t {
                multipliers[j * t + i] = self.multipliers[j * t + (i + 1).min(t - 1)];
            }
        }
        let inv_hessian = self.inv_hessian.as_ref().map(|h| {
            let n = h.nrows();
            let n_u = if t == 0 { 0 } else { n / t };
            let keep = n - n_u;
            // the new last stage gets the average curvature of the old one
            let scale = if n_u == 0 { 1.0 } else { (0..n_u).map(|i| h[(keep + i, keep + i)]).sum::<f64>() / n_u as f64 };
            let mut out = DMatrix::identity(n, n) * scale;
            out.view_mut((0, 0), (keep, keep)).copy_from(&h.view((n_u, n_u), (keep, keep)));
            out
        });
        WarmStart { u_seq, multipliers, inv_hessian }
    }
}

#[derive(Clone, Debug)]
pub struct OcpSolution {
    pub u_seq: Vec<DVector<f64>>,
    /// Full rollout at `u_seq` under the configured method (`T+1` entries).
    pub mean_traj: Vec<DVector<f64>>,
    pub cov_traj: Vec<DMatrix<f64>>,
    pub objective: f64,
    /// Projected-gradient norm of the Lagrangian (absolute).
    pub kkt_residual: f64,
    /// Largest tightened residual, floored at zero.
    pub max_violation: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub multipliers: DVector<f64>,
    pub trace: Vec<TraceRow>,
    inv_hessian: Option<DMatrix<f64>>,
}

impl OcpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            u_seq: self.u_seq.clone(),
            multipliers: self.multipliers.clone(),
            inv_hessian: self.inv_hessian.clone(),
        }
    }

    /// `iteration,objective,max_residual,step_norm`
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,objective,max_residual,step_norm\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", r.iteration, r.objective, r.max_residual, r.step_norm);
        }
        s
    }
}

#[derive(Clone, Debug)]
struct StageConstraint {
    a: DVector<f64>,
    b: DVector<f64>,
    c: f64,
    alpha: f64,
    state_only: bool,
}

/// A configured optimal-control problem: model, dynamics, cost and
/// constraints. Reusable across initial states.
#[derive(Debug)]
pub struct Ocp {
    config: MpcConfig,
    weights: CostWeights,
    dynamics: ResidualDynamics,
    model: Arc<dyn Regressor>,
    method: Box<dyn Propagator>,
    constraints: Vec<StageConstraint>,
}

/// Everything one evaluation needs besides the inputs.
struct EvalContext<'a> {
    ocp: &'a Ocp,
    x0: &'a DVector<f64>,
    /// Held covariances `Σ_0..Σ_T` in frozen mode.
    frozen: Option<Vec<DMatrix<f64>>>,
}

impl Ocp {
    pub fn new(config: MpcConfig, dynamics: ResidualDynamics, model: Arc<dyn Regressor>) -> Result<Self> {
        let n_x = dynamics.state_dim();
        let n_u = dynamics.input_dim();
        let weights = config.compile(n_x, n_u)?;
        check_dim(n_x + n_u, model.input_dim())?;
        check_dim(dynamics.residual_dim(), model.output_dim())?;
        let method = config.propagation.build()?;
        if method.is_sampling() {
            return Err(Error::input("MPC needs a deterministic propagation method"));
        }
        if !method.supports(model.as_ref()) {
            return Err(Error::Capability {
                method: method.name().to_string(),
                model: model.name().to_string(),
            });
        }
        let constraints = config
            .constraints
            .iter()
            .map(|c| {
                Ok(StageConstraint {
                    a: DVector::from_column_slice(&c.a),
                    b: c.input_part(n_u),
                    c: c.c,
                    alpha: inverse_normal_cdf(c.p)?,
                    state_only: c.is_state_only(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ocp {
            config,
            weights,
            dynamics,
            model,
            method,
            constraints,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn dynamics(&self) -> &ResidualDynamics {
        &self.dynamics
    }

    pub fn model(&self) -> &dyn Regressor {
        self.model.as_ref()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len() * self.horizon()
    }

    fn n_u(&self) -> usize {
        self.dynamics.input_dim()
    }

    fn split(&self, flat: &DVector<f64>) -> Vec<DVector<f64>> {
        let n_u = self.n_u();
        (0..self.horizon()).map(|i| flat.rows(i * n_u, n_u).into_owned()).collect()
    }

    fn flatten(&self, u_seq: &[DVector<f64>]) -> DVector<f64> {
        let n_u = self.n_u();
        let mut flat = DVector::zeros(self.horizon() * n_u);
        for (i, u) in u_seq.iter().enumerate() {
            flat.rows_mut(i * n_u, n_u).copy_from(u);
        }
        flat
    }

    /// Mean and covariance trajectories under the configured method.
    pub fn simulate(&self, x0: &DVector<f64>, u_seq: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
        let traj = rollout(
            &self.dynamics,
            self.model.as_ref(),
            &GaussianBelief::point(x0.clone()),
            u_seq,
            self.method.as_ref(),
        )?;
        Ok(traj.into_iter().map(|b| (b.mean().clone(), b.cov().clone())).unzip())
    }

    /// Objective and tightened residuals (constraint-major) for the
    /// propagated covariance model.
    pub fn evaluate(&self, x0: &DVector<f64>, u_seq: &[DVector<f64>]) -> Result<(f64, DVector<f64>)> {
        check_dim(self.horizon(), u_seq.len())?;
        let ctx = EvalContext { ocp: self, x0, frozen: None };
        ctx.eval(&self.flatten(u_seq))
    }

    /// Finite-difference gradient of the objective with respect to the
    /// flattened input sequence (the solver's gradient).
    pub fn objective_gradient(&self, x0: &DVector<f64>, u_seq: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_dim(self.horizon(), u_seq.len())?;
        let ctx = EvalContext { ocp: self, x0, frozen: None };
        Ok(ctx.jacobian(&self.flatten(u_seq))?.2)
    }

    pub fn solve(&self, x0: &DVector<f64>, warm: Option<&WarmStart>) -> Result<OcpSolution> {
        check_dim(self.dynamics.state_dim(), x0.len())?;
        let t = self.horizon();
        let n_u = self.n_u();
        let n_c = self.n_constraints();
        let opts = &self.config.solver;

        let lo = DVector::from_fn(t * n_u, |k, _| self.weights.u_lo[k % n_u]);
        let hi = DVector::from_fn(t * n_u, |k, _| self.weights.u_hi[k % n_u]);
        let (u_init, mut lambda) = match warm {
            Some(w) => {
                check_dim(t, w.u_seq.len())?;
                let lam = if w.multipliers.len() == n_c {
                    w.multipliers.clone()
                } else {
                    DVector::zeros(n_c)
                };
                (self.flatten(&w.u_seq), lam)
            }
            None => (DVector::zeros(t * n_u), DVector::zeros(n_c)),
        };
        let mut u = crate::optim::project(&u_init, &lo, &hi);

        let frozen = match self.config.covariance_mode {
            CovarianceMode::Propagated => None,
            CovarianceMode::Frozen => Some(match warm {
                Some(w) => self.simulate(x0, &w.u_seq)?.1,
                None => vec![DMatrix::zeros(x0.len(), x0.len()); t + 1],
            }),
        };
        let ctx = EvalContext { ocp: self, x0, frozen };

        let mut rho = opts.initial_penalty;
        let mut used = 0;
        let mut prev_viol = f64::INFINITY;
        let mut trace = Vec::new();
        let mut inv_hessian = warm.and_then(|w| w.inv_hessian.clone()).filter(|h| h.nrows() == t * n_u);
        let mut stalls = 0;

        let (obj0, g0) = ctx.eval(&u)?;
        let mut cur = Iterate {
            viol: max_violation(&g0),
            u: u.clone(),
            obj: obj0,
            lambda: lambda.clone(),
            stationarity: f64::INFINITY,
            scale: 1.0,
        };
        let mut best = cur.clone();

        for outer in 0..opts.max_outer.max(1) {
            let remaining = opts.max_iter.saturating_sub(used);
            let lam = lambda.clone();
            let merit = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
                match ctx.jacobian(x) {
                    Ok((j, gx, dj, jac)) => {
                        let shifted = DVector::from_fn(gx.len(), |k, _| (lam[k] + rho * gx[k]).max(0.0));
                        let pen = (shifted.norm_squared() - lam.norm_squared()) / (2.0 * rho);
                        let grad = dj + jac.transpose() * &shifted;
                        Ok((j + pen, grad))
                    }
                    Err(Error::Divergence { .. }) => Ok((f64::INFINITY, DVector::zeros(x.len()))),
                    Err(e) => Err(e),
                }
            };
            let res = minimize_box_warm(
                merit,
                &u,
                &lo,
                &hi,
                &BfgsOptions {
                    max_iter: remaining,
                    grad_tol: opts.stationarity_tol.max((0.1 * cur.viol).min(1e-2)),
                    ..Default::default()
                },
                inv_hessian.as_ref(),
            )?;
            inv_hessian = Some(res.inv_hessian.clone());
            used += res.iterations;
            let step_norm = (&res.x - &u).amax();
            u = res.x;
            let (obj, g, dj, jac) = ctx.jacobian(&u)?;
            for k in 0..n_c {
                lambda[k] = (lambda[k] + rho * g[k]).max(0.0);
            }
            // the merit gradient at u is the Lagrangian gradient at the
            // updated multipliers
            let jl = jac.transpose() * &lambda;
            cur = Iterate {
                viol: max_violation(&g),
                stationarity: projected_gradient_norm(&u, &(&dj + &jl), &lo, &hi),
                scale: 1f64.max(dj.amax()).max(jl.amax()),
                u: u.clone(),
                obj,
                lambda: lambda.clone(),
            };
            trace.push(TraceRow {
                iteration: outer,
                objective: obj,
                max_residual: g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                step_norm,
            });
            if cur.better_than(&best, opts.constraint_tol) {
                best = cur.clone();
            }
            if cur.converged(opts) {
                best = cur.clone();
                break;
            }
            if used >= opts.max_iter {
                break;
            }
            // finite-difference noise floor: no progress left to make
            if res.status == BfgsStatus::Stalled && cur.viol <= opts.constraint_tol {
                stalls += 1;
                if stalls >= 2 {
                    break;
                }
            } else {
                stalls = 0;
            }
            if cur.viol > opts.constraint_tol && cur.viol > 0.25 * prev_viol {
                rho = (rho * 10.0).min(1e8);
            }
            prev_viol = cur.viol;
        }
        let status = if best.viol > opts.constraint_tol {
            SolveStatus::Infeasible
        } else if best.converged(opts) {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIter
        };
        let Iterate {
            u,
            obj,
            viol,
            lambda,
            stationarity,
            ..
        } = best;

        let u_seq = self.split(&u);
        let (mean_traj, cov_traj) = self.simulate(x0, &u_seq)?;
        Ok(OcpSolution {
            u_seq,
            mean_traj,
            cov_traj,
            objective: obj,
            kkt_residual: stationarity,
            max_violation: viol,
            iterations: used,
            status,
            multipliers: lambda,
            trace,
            inv_hessian,
        })
    }
}

#[derive(Clone, Debug)]
struct Iterate {
    u: DVector<f64>,
    obj: f64,
    viol: f64,
    lambda: DVector<f64>,
    /// Projected Lagrangian gradient norm.
    stationarity: f64,
    /// Size of the gradient terms the stationarity test is relative to.
    scale: f64,
}

impl Iterate {
    fn converged(&self, opts: &super::SolverOptions) -> bool {
        self.viol <= opts.constraint_tol && self.stationarity <= opts.stationarity_tol * self.scale
    }

    /// Feasible beats infeasible; then lower objective or lower violation.
    fn better_than(&self, other: &Iterate, tol: f64) -> bool {
        match (self.viol <= tol, other.viol <= tol) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.obj < other.obj || (self.obj == other.obj && self.stationarity < other.stationarity),
            (false, false) => self.viol < other.viol,
        }
    }
}

fn max_violation(g: &DVector<f64>) -> f64 {
    g.iter().copied().fold(0.0, f64::max)
}

type Trajectory = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

impl EvalContext<'_> {
    /// Trajectory under `u_seq`. With `base`, stages up to `s` are taken
    /// from a trajectory that shares the inputs before stage `s`.
    fn trajectory(&self, u_seq: &[DVector<f64>], base: Option<(&Trajectory, usize)>) -> Result<Trajectory> {
        let ocp = self.ocp;
        let (s, mut means, mut covs) = match base {
            Some(((m, c), s)) => (s, m[..=s].to_vec(), c[..=s].to_vec()),
            None => (0, vec![self.x0.clone()], vec![DMatrix::zeros(self.x0.len(), self.x0.len())]),
        };
        match &self.frozen {
            None => {
                let start = GaussianBelief::from_parts(means[s].clone(), covs[s].clone());
                let tail = rollout(&ocp.dynamics, ocp.model.as_ref(), &start, &u_seq[s..], ocp.method.as_ref())?;
                for b in tail.into_iter().skip(1) {
                    let (m, c) = b.into_parts();
                    means.push(m);
                    covs.push(c);
                }
            }
            Some(frozen) => {
                let t = u_seq.len();
                let tail = rollout_means(
                    &ocp.dynamics,
                    ocp.model.as_ref(),
                    &means[s],
                    &u_seq[s..],
                    &frozen[s..t],
                    ocp.method.as_ref(),
                )?;
                means.extend(tail.into_iter().skip(1));
                covs = frozen.clone();
            }
        }
        Ok((means, covs))
    }

    fn score(&self, u_seq: &[DVector<f64>], (means, covs): &Trajectory) -> Result<(f64, DVector<f64>)> {
        let ocp = self.ocp;
        let w = &ocp.weights;
        let t = u_seq.len();
        let mut obj = 0.0;
        for (i, u) in u_seq.iter().enumerate() {
            let e = &means[i + 1] - &w.x_ref;
            let q = if i + 1 == t { &w.q_terminal } else { &w.q };
            obj += e.dot(&(q * &e)) + u.dot(&(&w.r * u));
        }
        let mut g = DVector::zeros(ocp.constraints.len() * t);
        for (j, c) in ocp.constraints.iter().enumerate() {
            for i in 0..t {
                let s = if c.state_only { i + 1 } else { i };
                let spread = c.a.dot(&(&covs[s] * &c.a)).max(0.0).sqrt();
                g[j * t + i] = c.a.dot(&means[s]) + c.b.dot(&u_seq[i]) + c.c + c.alpha * spread;
            }
        }
        if !obj.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t });
        }
        Ok((obj, g))
    }

    fn eval(&self, flat: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let u_seq = self.ocp.split(flat);
        let traj = self.trajectory(&u_seq, None)?;
        self.score(&u_seq, &traj)
    }

    /// Value, residuals, objective gradient and residual Jacobian by central
    /// differences. A perturbation of stage `s` only re-simulates from `s`.
    fn jacobian(&self, flat: &DVector<f64>) -> Result<(f64, DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        let n_u = self.ocp.n_u();
        let u_seq = self.ocp.split(flat);
        let traj = self.trajectory(&u_seq, None)?;
        let (obj, g) = self.score(&u_seq, &traj)?;
        let n = flat.len();
        let mut dj = DVector::zeros(n);
        let mut jac = DMatrix::zeros(g.len(), n);
        let step = self.ocp.config.solver.fd_step;
        for k in 0..n {
            let (s, c) = (k / n_u, k % n_u);
            let h = step * flat[k].abs().max(1.0);
            let side = |delta: f64| -> Result<(f64, DVector<f64>)> {
                let mut u = u_seq.clone();
                u[s][c] += delta;
                let tr = self.trajectory(&u, Some((&traj, s)))?;
                self.score(&u, &tr)
            };
            let (jp, gp) = side(h)?;
            let (jm, gm) = side(-h)?;
            dj[k] = (jp - jm) / (2.0 * h);
            jac.set_column(k, &((gp - gm) / (2.0 * h)));
        }
        Ok((obj, g, dj, jac))
    }
}

/// One-shot solve from a cold start.
pub fn solve_ocp(
    config: &MpcConfig,
    x0: &DVector<f64>,
    model: Arc<dyn Regressor>,
    dynamics: &ResidualDynamics,
) -> Result<OcpSolution> {
    Ocp::new(config.clone(), dynamics.clone(), model)?.solve(x0, None)
}
