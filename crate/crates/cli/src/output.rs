use std::fs;
use std::path::{Path, PathBuf};

use gpmpc::model::{ModelDocument, ModelRegistry};
use gpmpc::Regressor;
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};

/// Everything a command needs besides its own config section.
pub struct Context {
    pub loaded: LoadedConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub verbose: bool,
}

impl Context {
    pub fn hash(&self) -> &str {
        &self.loaded.hash
    }

    pub fn seed(&self) -> u64 {
        self.loaded.config.seed
    }

    pub fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn model_path(&self) -> PathBuf {
        match &self.loaded.config.model_file {
            Some(p) => self.loaded.resolve(p),
            None => self.out.join("model.json"),
        }
    }

    /// Writes `<out>/<name>` through a temporary file and a rename.
    pub fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        write_atomic(&path, contents)?;
        self.log(format!("wrote {}", path.display()));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    /// First line of every CSV output.
    pub fn csv_banner(&self, seed: u64) -> String {
        format!("# config_sha256={},seed={seed}\n", self.hash())
    }

    pub fn load_model(&self) -> CliResult<ModelFile> {
        let path = self.model_path();
        let text = fs::read_to_string(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if file.plant != self.loaded.config.plant {
            return Err(CliError::config(format!(
                "model was fitted on plant `{}`, config names `{}`",
                file.plant, self.loaded.config.plant
            )));
        }
        Ok(file)
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Model JSON as written by `fit`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub config_sha256: String,
    pub seed: u64,
    pub plant: String,
    pub model: ModelDocument,
}

impl ModelFile {
    pub fn build(&self) -> CliResult<Box<dyn Regressor>> {
        Ok(self.model.build(&ModelRegistry::default())?)
    }
}

/// Comma-joined shortest round-trip scientific notation.
pub fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

pub fn columns(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>().join(",")
}
