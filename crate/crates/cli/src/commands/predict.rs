use std::fmt::Write as _;

use nalgebra::DVector;

use super::{section, Command};
use crate::error::{CliError, CliResult};
use crate::output::{columns, join, Context};

pub struct Predict;

impl Command for Predict {
    fn name(&self) -> &'static str {
        "predict"
    }

    /// `point,z_i..,mean_d..,var_d..` with latent variances.
    fn run(&self, ctx: &Context) -> CliResult<()> {
        let sec = section(&ctx.loaded.config.predict, "predict")?;
        let model = ctx.load_model()?.build()?;
        for (i, p) in sec.points.iter().enumerate() {
            if p.len() != model.input_dim() {
                return Err(CliError::config(format!(
                    "point {i} has {} coordinates, the model expects {}",
                    p.len(),
                    model.input_dim()
                )));
            }
        }
        let n_d = model.output_dim();
        let mut s = ctx.csv_banner(ctx.seed());
        let _ = writeln!(
            s,
            "point,{},{},{}",
            columns("z", model.input_dim()),
            columns("mean", n_d),
            columns("var", n_d)
        );
        for (i, p) in sec.points.iter().enumerate() {
            let z = DVector::from_column_slice(p);
            let (mean, var) = model.predict(&z);
            if mean.iter().chain(var.iter()).any(|v| !v.is_finite()) {
                return Err(CliError::Numerical(format!("non-finite prediction at point {i}")));
            }
            let _ = writeln!(
                s,
                "{i},{},{},{}",
                join(p.iter().copied()),
                join(mean.iter().copied()),
                join(var.iter().copied())
            );
        }
        ctx.write("predictions.csv", &s)?;
        Ok(())
    }
}
