use gpmpc::gp::{expand_params, log_evidence, nll, train_hyperparams, TrainOptions};
use gpmpc::model::{ModelDocument, ModelRegistry};
use gpmpc::plant::generate_dataset;
use gpmpc::{Dataset, KernelParams};
use serde::Serialize;

use super::{plant, Command};
use crate::error::{CliError, CliResult};
use crate::output::{Context, ModelFile};

pub struct Fit;

#[derive(Serialize)]
struct DataSummary {
    source: String,
    n: usize,
    input_dim: usize,
    output_dim: usize,
    target_mean: Vec<f64>,
    target_std: Vec<f64>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    config_sha256: &'a str,
    seed: u64,
    plant: &'a str,
    method: &'a str,
    trained: bool,
    train_iterations: usize,
    /// Exact-GP negative log-likelihood at the final parameters, without
    /// constants.
    nll: f64,
    log_evidence: f64,
    params: Vec<KernelParams>,
    data: DataSummary,
}

fn summarize(data: &Dataset, source: String) -> DataSummary {
    let n = data.len() as f64;
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for d in 0..data.output_dim() {
        let y = data.target_column(d);
        let m = y.sum() / n;
        let var = if data.len() > 1 {
            y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean.push(m);
        std.push(var.sqrt());
    }
    DataSummary {
        source,
        n: data.len(),
        input_dim: data.input_dim(),
        output_dim: data.output_dim(),
        target_mean: mean,
        target_std: std,
    }
}

impl Command for Fit {
    fn name(&self) -> &'static str {
        "fit"
    }

    fn run(&self, ctx: &Context) -> CliResult<()> {
        let cfg = &ctx.loaded.config;
        let plant = plant(ctx)?;
        let registry = ModelRegistry::default();
        registry.get(&cfg.model.method)?;
        if cfg.model.init.is_empty() {
            return Err(CliError::config("`model.init` needs at least one parameter set"));
        }
        for p in &cfg.model.init {
            p.validate()?;
        }

        let (data, source) = match &cfg.data.csv {
            Some(p) => {
                let path = ctx.loaded.resolve(p);
                let text =
                    std::fs::read_to_string(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                let data = Dataset::from_csv_str(&text, plant.state_dim() + plant.input_dim())?;
                if data.output_dim() != plant.b_d().ncols() {
                    return Err(CliError::config(format!(
                        "{}: expected {} target columns",
                        path.display(),
                        plant.b_d().ncols()
                    )));
                }
                (data, format!("csv:{}", p.display()))
            }
            None => (
                generate_dataset(plant.as_ref(), &cfg.data.excitation, cfg.data.n, cfg.seed)?,
                format!("simulated:{}", plant.name()),
            ),
        };
        ctx.log(format!("dataset: {} points", data.len()));

        let (params, iterations) = if cfg.model.train {
            let opts = TrainOptions {
                budget: cfg.model.budget,
                ..Default::default()
            };
            let res = train_hyperparams(&data, &cfg.model.init, &opts)?;
            (res.params, res.iterations)
        } else {
            (expand_params(&cfg.model.init, data.output_dim())?, 0)
        };
        let nll_value = nll(&data, &params)?;
        ctx.log(format!("nll {nll_value:e} after {iterations} iterations"));

        let doc = ModelDocument::new(&registry, &cfg.model.method, &data, &params, &cfg.model.options)?;
        // fail here rather than in a later command
        doc.build(&registry)?;

        let file = ModelFile {
            config_sha256: ctx.hash().to_string(),
            seed: cfg.seed,
            plant: cfg.plant.clone(),
            model: doc,
        };
        ctx.write_json("model.json", &file)?;
        let report = FitReport {
            config_sha256: ctx.hash(),
            seed: cfg.seed,
            plant: &cfg.plant,
            method: &cfg.model.method,
            trained: cfg.model.train,
            train_iterations: iterations,
            nll: nll_value,
            log_evidence: log_evidence(&data, &params)?,
            params,
            data: summarize(&data, source),
        };
        ctx.write_json("fit_report.json", &report)?;
        Ok(())
    }
}
