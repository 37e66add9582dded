use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use gpmpc::mpc::{ControlStep, MpcController, Ocp, TraceRow};
use gpmpc::plant::{empirical_violation_rate, run_closed_loop, wilson_interval, Controller, Monitor, SimResult, ViolationStat};
use gpmpc::Regressor;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{plant, section, Command};
use crate::error::{CliError, CliResult};
use crate::output::Context;

pub struct MpcSim;

/// Keeps each solve's outer-iteration trace next to the applied input.
struct Traced {
    inner: MpcController,
    rows: Vec<(usize, TraceRow)>,
    keep: bool,
    k: usize,
}

impl Controller for Traced {
    fn step(&mut self, x: &DVector<f64>) -> gpmpc::Result<ControlStep> {
        let step = self.inner.step(x)?;
        if self.keep {
            if let Some(sol) = self.inner.last_solution() {
                let k = self.k;
                self.rows.extend(sol.trace.iter().cloned().map(|r| (k, r)));
            }
        }
        self.k += 1;
        Ok(step)
    }
}

#[derive(Serialize)]
struct SolverStats {
    solves: usize,
    mean_iterations: f64,
    max_iterations: usize,
    status_counts: BTreeMap<&'static str, usize>,
    infeasible_steps: usize,
}

#[derive(Serialize)]
struct EpisodeSummary {
    seed: u64,
    total_cost: f64,
    violations: usize,
    infeasible_steps: usize,
}

#[derive(Serialize)]
struct Aggregate<'a> {
    config_sha256: &'a str,
    seed: u64,
    plant: &'a str,
    episodes: usize,
    steps: usize,
    seeds: Vec<u64>,
    /// One entry per constraint, pooled over all steps of all episodes.
    violation_rates: Vec<ViolationStat>,
    /// Steps with at least one violated constraint.
    any_violation: ViolationStat,
    mean_cost: f64,
    cost_std: f64,
    solver: SolverStats,
    per_episode: Vec<EpisodeSummary>,
}

fn any_violation(results: &[SimResult]) -> ViolationStat {
    let total: usize = results.iter().map(|r| r.violations.len()).sum();
    let k = results
        .iter()
        .flat_map(|r| r.violations.iter())
        .filter(|row| row.iter().any(|v| *v))
        .count();
    let (wilson_lo, wilson_hi) = wilson_interval(k, total);
    ViolationStat {
        violations: k,
        total,
        rate: if total == 0 { 0.0 } else { k as f64 / total as f64 },
        wilson_lo,
        wilson_hi,
    }
}

impl Command for MpcSim {
    fn name(&self) -> &'static str {
        "mpc-sim"
    }

    fn run(&self, ctx: &Context) -> CliResult<()> {
        let cfg = &ctx.loaded.config;
        let sec = section(&cfg.mpc, "mpc")?;
        let seeds = sec.seeds(cfg.seed)?;
        if sec.steps == 0 {
            return Err(CliError::config("`mpc.steps` must be at least 1"));
        }
        let plant = plant(ctx)?;
        let controller = sec.controller.clone().unwrap_or_else(|| plant.default_mpc());
        let x0 = match &sec.x0 {
            Some(x) => DVector::from_column_slice(x),
            None => DVector::zeros(plant.state_dim()),
        };
        if x0.len() != plant.state_dim() {
            return Err(CliError::config(format!("`mpc.x0` needs {} entries", plant.state_dim())));
        }
        let model: Arc<dyn Regressor> = Arc::from(ctx.load_model()?.build()?);
        // validates the controller config and the method/model pairing once
        Ocp::new(controller.clone(), plant.dynamics()?, model.clone())?;
        let monitor = Monitor::from_mpc(&controller)?;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.jobs)
            .build()
            .map_err(|e| CliError::config(format!("--jobs: {e}")))?;
        let verbose = ctx.verbose;
        let runs: Vec<CliResult<(SimResult, Vec<(usize, TraceRow)>)>> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let ocp = Ocp::new(controller.clone(), plant.dynamics()?, model.clone())?;
                    let mut ctrl = Traced {
                        inner: MpcController::new(ocp),
                        rows: Vec::new(),
                        keep: verbose,
                        k: 0,
                    };
                    let sim = run_closed_loop(plant.as_ref(), &mut ctrl, &monitor, &x0, sec.steps, seed)
                        .map_err(|e| match CliError::from(e) {
                            CliError::Numerical(m) => CliError::Numerical(format!("episode seed {seed}: {m}")),
                            other => other,
                        })?;
                    Ok((sim, ctrl.rows))
                })
                .collect()
        });
        let mut results = Vec::with_capacity(runs.len());
        for (run, &seed) in runs.into_iter().zip(&seeds) {
            let (sim, trace) = run?;
            let mut s = ctx.csv_banner(seed);
            s.push_str(&sim.to_csv());
            ctx.write(&format!("episode_{seed}.csv"), &s)?;
            if verbose {
                let mut t = ctx.csv_banner(seed);
                t.push_str("step,iteration,objective,max_residual,step_norm\n");
                for (k, r) in &trace {
                    let _ = writeln!(
                        t,
                        "{k},{},{:e},{:e},{:e}",
                        r.iteration, r.objective, r.max_residual, r.step_norm
                    );
                }
                ctx.write(&format!("solver_trace_{seed}.csv"), &t)?;
            }
            results.push(sim);
        }

        let costs: Vec<f64> = results.iter().map(SimResult::total_cost).collect();
        let n = costs.len() as f64;
        let mean_cost = costs.iter().sum::<f64>() / n;
        let cost_std = if costs.len() > 1 {
            (costs.iter().map(|c| (c - mean_cost).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut status_counts = BTreeMap::new();
        let mut iters = Vec::new();
        for r in &results {
            for (st, it) in r.solver_status.iter().zip(&r.solver_iterations) {
                *status_counts.entry(st.as_str()).or_insert(0) += 1;
                iters.push(*it);
            }
        }
        let aggregate = Aggregate {
            config_sha256: ctx.hash(),
            seed: cfg.seed,
            plant: &cfg.plant,
            episodes: results.len(),
            steps: sec.steps,
            seeds: seeds.clone(),
            violation_rates: if controller.constraints.is_empty() {
                Vec::new()
            } else {
                empirical_violation_rate(&results)?
            },
            any_violation: any_violation(&results),
            mean_cost,
            cost_std,
            solver: SolverStats {
                solves: iters.len(),
                mean_iterations: iters.iter().sum::<usize>() as f64 / iters.len() as f64,
                max_iterations: iters.iter().copied().max().unwrap_or(0),
                status_counts,
                infeasible_steps: results.iter().map(|r| r.infeasible_steps.len()).sum(),
            },
            per_episode: results
                .iter()
                .map(|r| EpisodeSummary {
                    seed: r.seed,
                    total_cost: r.total_cost(),
                    violations: r.violations.iter().filter(|row| row.iter().any(|v| *v)).count(),
                    infeasible_steps: r.infeasible_steps.len(),
                })
                .collect(),
        };
        ctx.write_json("aggregate.json", &aggregate)?;
        Ok(())
    }
}
