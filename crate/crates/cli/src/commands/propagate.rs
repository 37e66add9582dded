use std::fmt::Write as _;

use gpmpc::dynamics::ResidualDynamics;
use gpmpc::linalg::matrix_from_nested;
use gpmpc::propagation::{mc_rollout, rollout};
use gpmpc::{GaussianBelief, PropagatorRegistry};
use nalgebra::DVector;
use serde::Serialize;

use super::{plant, section, Command};
use crate::error::{CliError, CliResult};
use crate::output::{columns, join, Context};

pub struct Propagate;

#[derive(Serialize)]
struct MethodGap {
    method: String,
    max_mean_gap: f64,
    max_var_gap: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_sha256: &'a str,
    seed: u64,
    mc_samples: usize,
    steps: usize,
    /// Largest Monte-Carlo standard error of a state mean over all steps.
    mc_max_std_error: f64,
    methods: Vec<MethodGap>,
}

/// Per-step sample mean and unbiased per-coordinate variance.
fn sample_moments(row: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let n = row.len() as f64;
    let mean = row.iter().fold(DVector::zeros(row[0].len()), |a, x| a + x) / n;
    let var = row
        .iter()
        .fold(DVector::zeros(mean.len()), |a, x| a + (x - &mean).map(|d| d * d))
        / (n - 1.0);
    (mean, var)
}

impl Command for Propagate {
    fn name(&self) -> &'static str {
        "propagate"
    }

    fn run(&self, ctx: &Context) -> CliResult<()> {
        let sec = section(&ctx.loaded.config.propagate, "propagate")?;
        let plant = plant(ctx)?;
        let registry = PropagatorRegistry::default();
        let mut methods = Vec::new();
        for m in &sec.methods {
            let p = registry.create(m)?;
            if p.is_sampling() {
                return Err(CliError::config(format!(
                    "`{}` is the reference ensemble; list only analytic methods",
                    p.name()
                )));
            }
            methods.push(p);
        }
        if methods.is_empty() {
            return Err(CliError::config("`propagate.methods` is empty"));
        }
        if sec.inputs.is_empty() {
            return Err(CliError::config("`propagate.inputs` is empty"));
        }
        let sigma_v = match &sec.sigma_v {
            Some(rows) => matrix_from_nested(rows)?,
            None => plant.sigma_v(),
        };
        let dynamics = ResidualDynamics::new(plant.nominal(), plant.b_d(), sigma_v)?;
        let x0 = GaussianBelief::try_from(&sec.x0)?;
        let inputs: Vec<DVector<f64>> = sec.inputs.iter().map(|u| DVector::from_column_slice(u)).collect();
        let model = ctx.load_model()?.build()?;
        for p in &methods {
            if !p.supports(model.as_ref()) {
                return Err(CliError::Capability(format!(
                    "propagation method `{}` is not supported for model `{}`",
                    p.name(),
                    model.name()
                )));
            }
        }

        let n_x = dynamics.state_dim();
        let seed = ctx.seed();
        ctx.log(format!("monte-carlo reference: {} particles", sec.mc_samples));
        let particles = mc_rollout(&dynamics, model.as_ref(), &x0, &inputs, sec.mc_samples, seed)?;
        let mc: Vec<_> = particles.iter().map(|row| sample_moments(row)).collect();
        let mc_max_std_error = mc
            .iter()
            .flat_map(|(_, v)| v.iter().map(|s| (s / sec.mc_samples as f64).sqrt()).collect::<Vec<_>>())
            .fold(0.0, f64::max);

        let mut csv = ctx.csv_banner(seed);
        let _ = writeln!(
            csv,
            "method,step,{},{},{},{},{},{}",
            columns("mean", n_x),
            columns("var", n_x),
            columns("mc_mean", n_x),
            columns("mc_var", n_x),
            columns("mean_gap", n_x),
            columns("var_gap", n_x)
        );
        let mut gaps = Vec::new();
        for p in &methods {
            ctx.log(format!("rollout: {}", p.name()));
            let traj = rollout(&dynamics, model.as_ref(), &x0, &inputs, p.as_ref())?;
            let (mut max_mean, mut max_var) = (0.0f64, 0.0f64);
            for (k, (b, (mc_mean, mc_var))) in traj.iter().zip(&mc).enumerate() {
                let var = b.cov().diagonal();
                let mean_gap = (b.mean() - mc_mean).abs();
                let var_gap = (&var - mc_var).abs();
                max_mean = max_mean.max(mean_gap.max());
                max_var = max_var.max(var_gap.max());
                let _ = writeln!(
                    csv,
                    "{},{k},{},{},{},{},{},{}",
                    p.name(),
                    join(b.mean().iter().copied()),
                    join(var.iter().copied()),
                    join(mc_mean.iter().copied()),
                    join(mc_var.iter().copied()),
                    join(mean_gap.iter().copied()),
                    join(var_gap.iter().copied())
                );
            }
            gaps.push(MethodGap {
                method: p.name().to_string(),
                max_mean_gap: max_mean,
                max_var_gap: max_var,
            });
        }
        ctx.write("propagate.csv", &csv)?;

        if sec.write_samples {
            let mut s = ctx.csv_banner(seed);
            let _ = writeln!(s, "step,sample,{}", columns("x", n_x));
            for (k, row) in particles.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    let _ = writeln!(s, "{k},{j},{}", join(x.iter().copied()));
                }
            }
            ctx.write("mc_samples.csv", &s)?;
        }

        ctx.write_json(
            "propagate_summary.json",
            &Summary {
                config_sha256: ctx.hash(),
                seed,
                mc_samples: sec.mc_samples,
                steps: inputs.len(),
                mc_max_std_error,
                methods: gaps,
            },
        )?;
        Ok(())
    }
}
