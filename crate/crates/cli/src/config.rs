//! Experiment configuration. One JSON document drives every subcommand; each
//! command reads the sections it needs and rejects the file when they are
//! missing. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use gpmpc::model::ModelOptions;
use gpmpc::mpc::MpcConfig;
use gpmpc::plant::Excitation;
use gpmpc::propagation::BeliefDoc;
use gpmpc::{KernelParams, PropagationMethod};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub plant: String,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Model consumed by `predict`, `propagate`, `mpc-sim` and
    /// `compare-sparse`; defaults to `<out>/model.json`.
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub predict: Option<PredictSection>,
    #[serde(default)]
    pub propagate: Option<PropagateSection>,
    #[serde(default)]
    pub mpc: Option<MpcSection>,
    #[serde(default)]
    pub compare_sparse: Option<CompareSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Number of excitation transitions to simulate.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub excitation: Excitation,
    /// Load `z_1..z_nz,y_1..` rows instead of simulating.
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

fn default_n() -> usize {
    200
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n: default_n(),
            excitation: Excitation::default(),
            csv: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub options: ModelOptions,
    /// Training starts; the best one is kept per output.
    #[serde(default = "default_init")]
    pub init: Vec<KernelParams>,
    #[serde(default = "default_true")]
    pub train: bool,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_method() -> String {
    "exact".into()
}

fn default_init() -> Vec<KernelParams> {
    vec![KernelParams {
        lambda: 1.0,
        eta: 1.0,
        sigma_w_sq: 1e-2,
    }]
}

fn default_true() -> bool {
    true
}

fn default_budget() -> usize {
    200
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            method: default_method(),
            options: ModelOptions::default(),
            init: default_init(),
            train: true,
            budget: default_budget(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateSection {
    pub methods: Vec<PropagationMethod>,
    pub x0: BeliefDoc,
    /// One input per step.
    pub inputs: Vec<Vec<f64>>,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    /// Replaces the plant's process noise (row-major).
    #[serde(default)]
    pub sigma_v: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_true")]
    pub write_samples: bool,
}

fn default_mc() -> usize {
    10_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    /// Episodes are seeded `seed+1..=seed+episodes` unless `seeds` is given.
    #[serde(default)]
    pub episodes: Option<usize>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Initial state; zeros when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Full controller settings; the plant's stock settings when absent.
    #[serde(default)]
    pub controller: Option<MpcConfig>,
}

fn default_steps() -> usize {
    50
}

impl MpcSection {
    pub fn seeds(&self, base: u64) -> CliResult<Vec<u64>> {
        let seeds = match (&self.seeds, self.episodes) {
            (Some(s), None) => s.clone(),
            (Some(s), Some(k)) if s.len() == k => s.clone(),
            (Some(_), Some(_)) => return Err(CliError::config("`episodes` disagrees with the length of `seeds`")),
            (None, Some(k)) => (1..=k as u64).map(|i| base + i).collect(),
            (None, None) => return Err(CliError::config("mpc section needs `episodes` or `seeds`")),
        };
        if seeds.is_empty() {
            return Err(CliError::config("at least one episode is required"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(CliError::config("episode seeds must be distinct"));
        }
        Ok(seeds)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseEntry {
    pub method: String,
    #[serde(default)]
    pub options: ModelOptions,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub methods: Vec<SparseEntry>,
    #[serde(default = "default_n")]
    pub n_test: usize,
}

/// A parsed config together with where it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig =
            serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let hash = hex::encode(Sha256::digest(&bytes));
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, hash, dir })
    }

    /// Resolves a path from the config relative to the config's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}
