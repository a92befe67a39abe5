use std::fs;
use std::io::Write;
use std::path::Path;

use fovea_core::attention::{distance_delta, DistanceProfile};
use fovea_core::toyenc::{evaluate_episodes, EpisodeMetrics};
use fovea_core::Error;
use serde::Serialize;

use super::gen::load_episodes;
use crate::config::{self, RunConfig};
use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_IMAGE_FILE: &str = "per_image.csv";
pub const PROFILE_BASELINE_FILE: &str = "profile_baseline.csv";
pub const PROFILE_ENHANCED_FILE: &str = "profile_enhanced.csv";
pub const DELTA_FILE: &str = "delta.csv";
pub const ERRORS_FILE: &str = "errors.log";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub failed: usize,
    pub f1_baseline: f64,
    pub f1_enhanced: f64,
    pub f1_wins: usize,
    pub dist_baseline: f64,
    pub dist_enhanced: f64,
    pub dist_reductions: usize,
}

impl RunSummary {
    fn from_metrics(metrics: &[EpisodeMetrics], failed: usize) -> Self {
        let n = metrics.len().max(1) as f64;
        let mean = |f: fn(&EpisodeMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
        Self {
            episodes: metrics.len() + failed,
            failed,
            f1_baseline: mean(|m| m.f1_baseline),
            f1_enhanced: mean(|m| m.f1_enhanced),
            f1_wins: metrics.iter().filter(|m| m.f1_enhanced >= m.f1_baseline).count(),
            dist_baseline: mean(|m| m.dist_baseline),
            dist_enhanced: mean(|m| m.dist_enhanced),
            dist_reductions: metrics.iter().filter(|m| m.dist_enhanced < m.dist_baseline).count(),
        }
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "episodes: {} ({} failed)", self.episodes, self.failed)?;
        writeln!(
            f,
            "per-cell F1: baseline {:.4}, enhanced {:.4} (enhanced >= baseline in {})",
            self.f1_baseline, self.f1_enhanced, self.f1_wins
        )?;
        write!(
            f,
            "attention distance: baseline {:.4}, enhanced {:.4} (reduced in {})",
            self.dist_baseline, self.dist_enhanced, self.dist_reductions
        )
    }
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_metrics(metrics: &[EpisodeMetrics], path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["episode_seed", "f1_baseline", "f1_enhanced", "dist_baseline", "dist_enhanced"])?;
    for m in metrics {
        w.write_record([
            m.episode_seed.to_string(),
            m.f1_baseline.to_string(),
            m.f1_enhanced.to_string(),
            m.dist_baseline.to_string(),
            m.dist_enhanced.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_per_image(metrics: &[EpisodeMetrics], path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "episode_seed",
        "query_index",
        "f1_baseline",
        "f1_enhanced",
        "dist_baseline",
        "dist_enhanced",
    ])?;
    for m in metrics {
        for im in &m.per_image {
            w.write_record([
                m.episode_seed.to_string(),
                im.query_index.to_string(),
                im.f1_baseline.to_string(),
                im.f1_enhanced.to_string(),
                im.dist_baseline.to_string(),
                im.dist_enhanced.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_profile(profile: &DistanceProfile, path: &Path) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(profile.write_csv(file)?)
}

fn validate(cfg: &RunConfig) -> CliResult<()> {
    cfg.suite.validate().map_err(CliError::from_config)?;
    cfg.enhancement.validate().map_err(CliError::from_config)?;
    if cfg.episodes_dir.is_none() && cfg.episodes == 0 {
        return Err(CliError::usage("episodes must be ≥ 1"));
    }
    Ok(())
}

/// Runs the full pipeline. Successful episodes are always written; the
/// returned error, if any, reflects the worst per-episode failure.
pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<RunSummary> {
    validate(cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    config::echo(cfg, out)?;

    let enc = cfg.suite.encoder().map_err(CliError::from_config)?;
    let results: Vec<(u64, Result<EpisodeMetrics, Error>)> = match &cfg.episodes_dir {
        Some(dir) => {
            let episodes = load_episodes(dir)?;
            let seeds: Vec<u64> = episodes.iter().map(|e| e.seed).collect();
            seeds
                .into_iter()
                .zip(evaluate_episodes(&episodes, &cfg.enhancement, &enc, cfg.enhance))
                .collect()
        }
        None => {
            let seeds: Vec<u64> = (0..cfg.episodes as u64).map(|i| cfg.seed + i).collect();
            let metrics = fovea_core::toyenc::evaluate_suite(&cfg.suite, &seeds, &cfg.enhancement, cfg.enhance)?;
            seeds.into_iter().zip(metrics).collect()
        }
    };

    let mut ok = Vec::new();
    let mut failed = 0;
    let mut worst: Option<CliError> = None;
    let errors_path = out.join(ERRORS_FILE);
    let mut log = fs::File::create(&errors_path).map_err(|e| CliError::io(&errors_path, e))?;
    for (seed, r) in results {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => {
                failed += 1;
                writeln!(log, "episode {seed}: {e}").map_err(|e| CliError::io(&errors_path, e))?;
                let err = CliError::from(e);
                if worst.as_ref().is_none_or(|w| (err.code as i32) > (w.code as i32)) {
                    worst = Some(err);
                }
            }
        }
    }

    write_metrics(&ok, &out.join(METRICS_FILE))?;
    write_per_image(&ok, &out.join(PER_IMAGE_FILE))?;
    if !ok.is_empty() {
        let before: Vec<DistanceProfile> = ok.iter().map(|m| m.profile_baseline.clone()).collect();
        let after: Vec<DistanceProfile> = ok.iter().map(|m| m.profile_enhanced.clone()).collect();
        let before = DistanceProfile::average(&before)?;
        let after = DistanceProfile::average(&after)?;
        write_profile(&before, &out.join(PROFILE_BASELINE_FILE))?;
        write_profile(&after, &out.join(PROFILE_ENHANCED_FILE))?;
        let delta = distance_delta(&before, &after)?;
        let path = out.join(DELTA_FILE);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        delta.write_csv(file)?;
    }

    let summary = RunSummary::from_metrics(&ok, failed);
    match worst {
        Some(mut e) => {
            e.message = format!("{summary}\n{}", e.message);
            Err(e)
        }
        None => Ok(summary),
    }
}
