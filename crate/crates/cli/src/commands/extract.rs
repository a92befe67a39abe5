use std::fs;
use std::path::Path;

use fovea_core::prototypes::{accumulate_from_support, save_repository, RepositoryMetadata};
use fovea_core::{PrototypeRepository, Scene};

use crate::config::{self, ExtractConfig};
use crate::error::{CliError, CliResult};

pub const REPOSITORY_FILE: &str = "repository.json";

pub fn run(cfg: &ExtractConfig, out: &Path) -> CliResult<PrototypeRepository> {
    cfg.suite.validate().map_err(CliError::from_config)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    config::echo(cfg, out)?;
    let scenes = if cfg.scenes.is_empty() {
        cfg.suite.generate(cfg.seed).map_err(CliError::from_config)?.support
    } else {
        cfg.scenes
            .iter()
            .map(|p| Scene::load(p))
            .collect::<fovea_core::Result<Vec<_>>>()?
    };
    let repo = accumulate_from_support(
        &scenes,
        RepositoryMetadata {
            seed: cfg.seed,
            shots: scenes.len(),
        },
    )?;
    save_repository(&repo, &out.join(REPOSITORY_FILE))?;
    Ok(repo)
}
