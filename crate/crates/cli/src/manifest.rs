//! Run configuration and the reproducibility manifest written by every
//! subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use transmon_noise::config::DeviceConfig;
use transmon_noise::fit::{FitConfig, NoiseParameters};
use transmon_noise::{Error, Result};

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub device: DeviceConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// SHA-256 of the dataset file contents.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParameters>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    /// Remaining flags, rendered as strings.
    pub options: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &str, seed: u64, output_dir: &Path, device: DeviceConfig) -> Self {
        Self {
            command: command.into(),
            seed,
            output_dir: output_dir.to_path_buf(),
            device,
            dataset: None,
            dataset_sha256: None,
            noise: None,
            fit: None,
            options: BTreeMap::new(),
        }
    }

    pub fn option(mut self, key: &str, value: impl ToString) -> Self {
        self.options.insert(key.into(), value.to_string());
        self
    }

    pub fn with_dataset(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        self.dataset_sha256 = Some(format!("{:x}", Sha256::digest(&bytes)));
        self.dataset = Some(path.to_path_buf());
        Ok(self)
    }

    fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering, excluding the output directory.
    pub fn hash(&self) -> Result<String> {
        let canonical = RunConfig { output_dir: PathBuf::new(), ..self.clone() };
        Ok(format!("{:x}", Sha256::digest(canonical.to_toml()?.as_bytes())))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: String,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// Writes `manifest.toml` into the run's output directory.
pub fn write_manifest(cfg: &RunConfig, outputs: &[PathBuf]) -> Result<PathBuf> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: &cfg.command,
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
        config: cfg,
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("manifest.toml");
    std::fs::write(&path, toml::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?)?;
    Ok(path)
}
