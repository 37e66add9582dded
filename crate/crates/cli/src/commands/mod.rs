//! Subcommands as named strategies.

mod compare_sparse;
mod fit;
mod mpc_sim;
mod predict;
mod propagate;

use std::collections::BTreeMap;
use std::sync::Arc;

use gpmpc::plant::{PlantModel, PlantRegistry};

use crate::error::{CliError, CliResult};
use crate::output::Context;

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &Context) -> CliResult<()>;
}

pub struct CommandRegistry {
    commands: BTreeMap<&'static str, Box<dyn Command>>,
}

impl Default for CommandRegistry {
    fn default() -> Self {
        let mut r = CommandRegistry { commands: BTreeMap::new() };
        r.register(Box::new(fit::Fit));
        r.register(Box::new(predict::Predict));
        r.register(Box::new(propagate::Propagate));
        r.register(Box::new(mpc_sim::MpcSim));
        r.register(Box::new(compare_sparse::CompareSparse));
        r
    }
}

impl CommandRegistry {
    pub fn register(&mut self, cmd: Box<dyn Command>) {
        self.commands.insert(cmd.name(), cmd);
    }

    pub fn get(&self, name: &str) -> CliResult<&dyn Command> {
        self.commands
            .get(name)
            .map(|c| c.as_ref())
            .ok_or_else(|| CliError::config(format!("unknown command `{name}`")))
    }
}

fn plant(ctx: &Context) -> CliResult<Arc<dyn PlantModel>> {
    Ok(PlantRegistry::default().create(&ctx.loaded.config.plant)?)
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    s.as_ref()
        .ok_or_else(|| CliError::config(format!("config has no `{name}` section")))
}
