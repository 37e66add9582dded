use std::fmt::Write as _;

use gpmpc::gp::ExactGp;
use gpmpc::model::ModelRegistry;
use gpmpc::plant::generate_dataset;
use gpmpc::sparse::{InducingSet, VfePosterior};
use gpmpc::Regressor;

use super::{plant, section, Command};
use crate::error::{CliError, CliResult};
use crate::output::Context;

pub struct CompareSparse;

struct Row {
    method: String,
    size: Option<usize>,
    rmse: f64,
    mean_gap: f64,
    var_gap: f64,
    elbo: Option<f64>,
}

impl Command for CompareSparse {
    fn name(&self) -> &'static str {
        "compare-sparse"
    }

    /// Every sparse method is built on the fitted model's data and
    /// hyperparameters and scored on fresh transitions from the plant, both
    /// against the targets and against the exact GP.
    fn run(&self, ctx: &Context) -> CliResult<()> {
        let cfg = &ctx.loaded.config;
        let sec = section(&cfg.compare_sparse, "compare_sparse")?;
        if sec.methods.is_empty() {
            return Err(CliError::config("`compare_sparse.methods` is empty"));
        }
        let registry = ModelRegistry::default();
        for m in &sec.methods {
            registry.get(&m.method)?;
        }
        let plant = plant(ctx)?;
        let file = ctx.load_model()?;
        let data = file.model.dataset()?;
        let params = file.model.params.clone();
        let exact = ExactGp::fit(&data, &params)?;
        // a stream disjoint from the training draw
        let test = generate_dataset(plant.as_ref(), &cfg.data.excitation, sec.n_test, cfg.seed.wrapping_add(1))?;

        let score = |model: &dyn Regressor| -> (f64, f64, f64) {
            let (mut sse, mut mean_gap, mut var_gap) = (0.0, 0.0f64, 0.0f64);
            for (i, z) in test.inputs().iter().enumerate() {
                let (m, v) = model.predict(z);
                let (me, ve) = Regressor::predict(&exact, z);
                for d in 0..m.len() {
                    sse += (m[d] - test.targets()[(i, d)]).powi(2);
                    mean_gap = mean_gap.max((m[d] - me[d]).abs());
                    var_gap = var_gap.max((v[d] - ve[d]).abs());
                }
            }
            let n = (test.len() * test.output_dim()) as f64;
            ((sse / n).sqrt(), mean_gap, var_gap)
        };

        let mut rows = Vec::new();
        let (rmse, _, _) = score(&exact);
        rows.push(Row {
            method: "exact".into(),
            size: Some(data.len()),
            rmse,
            mean_gap: 0.0,
            var_gap: 0.0,
            elbo: None,
        });
        for m in &sec.methods {
            ctx.log(format!("building {}", m.method));
            let opts = registry.get(&m.method)?.resolve(&data, &m.options)?;
            let model = registry.build(&m.method, &data, &params, &opts)?;
            let elbo = if m.method == "vfe" {
                let points = opts.inducing_points.clone().unwrap_or_default();
                let set = InducingSet::new(points.into_iter().map(nalgebra::DVector::from_vec).collect())?;
                Some(VfePosterior::fit(&data, &params, &set)?.elbo())
            } else {
                None
            };
            let (rmse, mean_gap, var_gap) = score(model.as_ref());
            if !(rmse.is_finite() && mean_gap.is_finite() && var_gap.is_finite()) {
                return Err(CliError::Numerical(format!("`{}` produced non-finite predictions", m.method)));
            }
            rows.push(Row {
                method: m.method.clone(),
                size: opts.inducing.or(opts.features),
                rmse,
                mean_gap,
                var_gap,
                elbo,
            });
        }

        let mut s = ctx.csv_banner(cfg.seed);
        s.push_str("method,size,rmse,max_mean_gap,max_var_gap,elbo\n");
        for r in &rows {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{}",
                r.method,
                r.size.map(|v| v.to_string()).unwrap_or_default(),
                r.rmse,
                r.mean_gap,
                r.var_gap,
                r.elbo.map(|v| format!("{v:e}")).unwrap_or_default()
            );
        }
        ctx.write("compare_sparse.csv", &s)?;
        Ok(())
    }
}
