use std::fs;
use std::path::Path;

use fovea_core::toyenc::{Episode, ShiftSpec};
use fovea_core::Scene;
use serde::{Deserialize, Serialize};

use crate::config::{self, GenConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub shift: ShiftSpec,
    pub support: Vec<String>,
    pub query: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub episodes: Vec<ManifestEntry>,
}

fn write_scenes(dir: &Path, rel: &str, prefix: &str, scenes: &[Scene]) -> CliResult<Vec<String>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = format!("{rel}/{prefix}_{i}.json");
            let path = dir.join(&name);
            fs::write(&path, s.to_json()? + "\n").map_err(|e| CliError::io(&path, e))?;
            Ok(name)
        })
        .collect()
}

pub fn run(cfg: &GenConfig, out: &Path) -> CliResult<Manifest> {
    cfg.suite.validate().map_err(CliError::from_config)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    config::echo(cfg, out)?;
    let mut entries = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes as u64 {
        let seed = cfg.seed + i;
        let shift = cfg.suite.shift(seed);
        let Episode { support, query, .. } = cfg.suite.generate(seed)?;
        let rel = format!("episode_{seed:04}");
        let dir = out.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        entries.push(ManifestEntry {
            seed,
            shift,
            support: write_scenes(out, &rel, "support", &support)?,
            query: write_scenes(out, &rel, "query", &query)?,
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        episodes: entries,
    };
    config::write_json(&manifest, &out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reads every episode listed in `<dir>/manifest.json`.
pub fn load_episodes(dir: &Path) -> CliResult<Vec<Episode>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let load = |names: &[String]| -> CliResult<Vec<Scene>> {
        names.iter().map(|n| Ok(Scene::load(&dir.join(n))?)).collect()
    };
    manifest
        .episodes
        .iter()
        .map(|e| {
            Ok(Episode {
                seed: e.seed,
                support: load(&e.support)?,
                query: load(&e.query)?,
            })
        })
        .collect()
}
