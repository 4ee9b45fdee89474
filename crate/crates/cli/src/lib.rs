//! Configuration-driven runs of the transduction simulator with
//! deterministic CSV and JSON output.

pub mod config;
pub mod experiments;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{parse_config, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn config(field: impl AsRef<str>, reason: impl AsRef<str>) -> Self {
        CliError::Config(format!("`{}`: {}", field.as_ref(), reason.as_ref()))
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for configuration problems, 3 for everything that failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io { .. } => 3,
        }
    }
}

impl From<transduction::Error> for CliError {
    fn from(e: transduction::Error) -> Self {
        use transduction::Error as E;
        match e {
            E::IntegrationFailure { .. }
            | E::InvalidState(_)
            | E::Stiff { .. }
            | E::ThermalInflux { .. }
            | E::TruncationInsufficient { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmittedFile {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    /// Effective configuration after defaults and overrides, as TOML.
    pub config_toml: String,
    pub config: ExperimentConfig,
    pub duration_s: f64,
    pub files: Vec<EmittedFile>,
    pub warnings: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects output files and their digests.
pub struct Output {
    dir: PathBuf,
    files: Vec<EmittedFile>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        self.files.push(EmittedFile { path: name.to_string(), bytes: data.len() as u64, sha256: sha256_hex(data) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::io(&self.dir.join(name), e))?;
        self.write(name, &buf)
    }
}

/// Runs the configured experiment into `out` and writes the manifest last.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let mut output = Output::create(out)?;
    let warnings = experiments::dispatch(config, &mut output)?;
    let manifest = RunManifest {
        tool: "transduce".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: config.experiment.to_string(),
        config_toml: config.to_toml(),
        config: config.clone(),
        duration_s: start.elapsed().as_secs_f64(),
        files: output.files,
        warnings,
    };
    let path = out.join(MANIFEST_NAME);
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push(b'\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(manifest)
}
