//! Per-command configuration. Values resolve as command line, then
//! `--config` file, then defaults; the resolved value is echoed to
//! `config.json` in the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use fovea_core::toyenc::SuiteConfig;
use fovea_core::tsa::{HashNgramEmbedder, DEFAULT_LAMBDA_BG, DEFAULT_TAU_CTR};
use fovea_core::EnhancementConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub episodes: usize,
    pub suite: SuiteConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 10,
            suite: SuiteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: usize,
    /// Read episodes written by `gen` instead of generating them.
    pub episodes_dir: Option<PathBuf>,
    pub suite: SuiteConfig,
    pub enhancement: EnhancementConfig,
    pub enhance: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 100,
            episodes_dir: None,
            suite: SuiteConfig::default(),
            enhancement: EnhancementConfig::default(),
            enhance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    pub tau_ctr: f64,
    pub lambda_bg: f64,
    pub shared_dim: usize,
    /// Softmax temperature for picking bank texts per visual row.
    pub selection_temperature: f64,
    /// Softmax temperature of the detector's proxy loss.
    pub detection_temperature: f64,
    pub domain: String,
    pub bank: Option<PathBuf>,
    pub repository: Option<PathBuf>,
    pub embedder: HashNgramEmbedder,
    pub suite: SuiteConfig,
    pub check_grad: bool,
    pub grad_step: f64,
    pub grad_tolerance: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        let mut suite = SuiteConfig::default();
        suite.episode.shots = 8;
        Self {
            seed: 0,
            steps: 200,
            learning_rate: 1e-2,
            tau_ctr: DEFAULT_TAU_CTR,
            lambda_bg: DEFAULT_LAMBDA_BG,
            shared_dim: 32,
            selection_temperature: 0.1,
            detection_temperature: 0.1,
            domain: "synthetic".into(),
            bank: None,
            repository: None,
            embedder: HashNgramEmbedder::default(),
            suite,
            check_grad: false,
            grad_step: 1e-3,
            grad_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub seed: u64,
    pub dump: PathBuf,
    pub after: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub seed: u64,
    /// Support scene files; when empty, the support set of episode `seed` is generated.
    pub scenes: Vec<PathBuf>,
    pub suite: SuiteConfig,
}

/// Reads a config file, or the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(format!("serialize: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    fs::write(path, to_json(value)?).map_err(|e| CliError::io(path, e))
}

/// Writes the resolved configuration to `<out>/config.json`.
pub fn echo<T: Serialize>(value: &T, out: &Path) -> CliResult<()> {
    write_json(value, &out.join(CONFIG_FILE))
}
