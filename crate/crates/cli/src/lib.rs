//! Batch runner for the fovea pipeline: episode generation, prototype
//! extraction, enhancement runs, attention profiling and alignment training.
//!
//! Every subcommand takes `--seed`, `--out` and `--config`. Values resolve
//! as command line, then config file, then defaults, and the resolved config
//! is written to `<out>/config.json`. Environment variables are not read.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fovea_core::census::{ParameterCensus, ParameterCount};
use fovea_core::toyenc::SuiteConfig;
use fovea_core::tsa::{AlignmentState, HashNgramEmbedder};
use fovea_core::{EnhancementConfig, PrototypeRepository, ToyEncoder};

use crate::error::{CliError, CliResult, ExitCode};

#[derive(Debug, Parser)]
#[command(name = "fovea", version, about = "Center-periphery feature refinement for few-shot detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic episodes as scene JSON plus a manifest.
    Gen(GenArgs),
    /// Evaluate baseline and enhanced features over a suite of episodes.
    Run(RunArgs),
    /// Train the text-to-background alignment projections.
    Align(AlignArgs),
    /// Compute per-layer attention distance from an attention dump.
    Profile(ProfileArgs),
    /// Build a prototype repository from support scenes.
    Extract(ExtractArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Support shots per class.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_query: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub style: Option<f64>,
    #[arg(long)]
    pub clutter: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

impl SuiteArgs {
    fn apply(&self, suite: &mut SuiteConfig) {
        if let Some(v) = self.k {
            suite.episode.shots = v;
        }
        if let Some(v) = self.n_query {
            suite.episode.n_query = v;
        }
        if let Some(v) = self.classes {
            suite.episode.n_classes = v;
        }
        if let Some(v) = self.style {
            suite.style_magnitude = v;
        }
        if let Some(v) = self.clutter {
            suite.clutter_level = v;
        }
        if let Some(v) = self.noise {
            suite.noise_sigma = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Directory written by `gen`; episodes are read instead of generated.
    #[arg(long)]
    pub episodes_dir: Option<PathBuf>,
    /// Mask threshold for both branches.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Enhancement strength for both branches.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Class-weight softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Evaluate the baseline only.
    #[arg(long)]
    pub no_enhance: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the alignment loss in the total.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    pub tau_ctr: Option<f64>,
    #[arg(long)]
    pub shared_dim: Option<usize>,
    /// Built-in text bank domain.
    #[arg(long)]
    pub domain: Option<String>,
    /// Text bank JSON file (overrides --domain).
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Prototype repository JSON file.
    #[arg(long)]
    pub repo: Option<PathBuf>,
    /// Compare analytic gradients with finite differences; exit 3 on mismatch.
    #[arg(long)]
    pub check_grad: bool,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Attention dump JSON.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Second dump; a delta against the first is written.
    #[arg(long)]
    pub after: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Support scene JSON files.
    #[arg(long, num_args = 1..)]
    pub scenes: Vec<PathBuf>,
}

fn resolve_gen(args: &GenArgs) -> CliResult<config::GenConfig> {
    let mut cfg: config::GenConfig = config::load(args.common.config.as_deref())?;
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    args.suite.apply(&mut cfg.suite);
    Ok(cfg)
}

fn resolve_run(args: &RunArgs) -> CliResult<config::RunConfig> {
    let mut cfg: config::RunConfig = config::load(args.common.config.as_deref())?;
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = &args.episodes_dir {
        cfg.episodes_dir = Some(v.clone());
    }
    args.suite.apply(&mut cfg.suite);
    if let Some(v) = args.tau {
        cfg.enhancement.tau_fg = v;
        cfg.enhancement.tau_bg = v;
    }
    if let Some(v) = args.gamma {
        cfg.enhancement.gamma_fg = v;
        cfg.enhancement.gamma_bg = v;
    }
    if let Some(v) = args.temperature {
        cfg.enhancement.temperature = v;
    }
    if args.no_enhance {
        cfg.enhance = false;
    }
    Ok(cfg)
}

fn resolve_align(args: &AlignArgs) -> CliResult<config::AlignConfig> {
    let mut cfg: config::AlignConfig = config::load(args.common.config.as_deref())?;
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    args.suite.apply(&mut cfg.suite);
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda_bg = v;
    }
    if let Some(v) = args.tau_ctr {
        cfg.tau_ctr = v;
    }
    if let Some(v) = args.shared_dim {
        cfg.shared_dim = v;
    }
    if let Some(v) = &args.domain {
        cfg.domain = v.clone();
    }
    if let Some(v) = &args.bank {
        cfg.bank = Some(v.clone());
    }
    if let Some(v) = &args.repo {
        cfg.repository = Some(v.clone());
    }
    if args.check_grad {
        cfg.check_grad = true;
    }
    Ok(cfg)
}

fn resolve_profile(args: &ProfileArgs) -> CliResult<config::ProfileConfig> {
    let mut cfg: config::ProfileConfig = config::load(args.common.config.as_deref())?;
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.dump {
        cfg.dump = v.clone();
    }
    if let Some(v) = &args.after {
        cfg.after = Some(v.clone());
    }
    Ok(cfg)
}

fn resolve_extract(args: &ExtractArgs) -> CliResult<config::ExtractConfig> {
    let mut cfg: config::ExtractConfig = config::load(args.common.config.as_deref())?;
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    if !args.scenes.is_empty() {
        cfg.scenes = args.scenes.clone();
    }
    args.suite.apply(&mut cfg.suite);
    Ok(cfg)
}

/// Trainable/frozen counts for every component of the pipeline.
pub fn system_census(
    repo: &PrototypeRepository,
    encoder: &ToyEncoder,
    state: &AlignmentState,
    embedder: &HashNgramEmbedder,
) -> ParameterCensus {
    let enhancement = EnhancementConfig::default();
    let mut census = ParameterCensus::new();
    census
        .record("ppr", &enhancement)
        .record("ncm", &enhancement)
        .record("prototype_repository", repo)
        .record("toy_encoder", encoder)
        .record("text_embedder", embedder)
        .record_count("tsa.proj_v", ParameterCount::trainable(state.proj_v.len()))
        .record_count("tsa.proj_t", ParameterCount::trainable(state.proj_t.len()));
    census
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(args) => {
            let cfg = resolve_gen(&args)?;
            let manifest = commands::gen::run(&cfg, &args.common.out)?;
            println!("wrote {} episodes to {}", manifest.episodes.len(), args.common.out.display());
        }
        Command::Run(args) => {
            let cfg = resolve_run(&args)?;
            let summary = commands::run::run(&cfg, &args.common.out)?;
            println!("{summary}");
        }
        Command::Align(args) => {
            let cfg = resolve_align(&args)?;
            let report = commands::align::run(&cfg, &args.common.out)?;
            println!(
                "contrastive loss {} -> {} over {} steps; total {}",
                report.initial_ctr_loss, report.final_ctr_loss, report.steps, report.total_loss_final
            );
            if let Some(check) = report.gradient_check {
                println!("gradient check: max relative error {:e}", check.max_rel_error());
            }
        }
        Command::Profile(args) => {
            let cfg = resolve_profile(&args)?;
            let (profile, delta) = commands::profile::run(&cfg, &args.common.out)?;
            for layer in &profile.layers {
                println!("{}\t{}", layer.label, layer.mean_distance);
            }
            if let Some(delta) = delta {
                for layer in &delta.layers {
                    println!("delta {}\t{}", layer.label, layer.delta);
                }
            }
        }
        Command::Extract(args) => {
            let cfg = resolve_extract(&args)?;
            let repo = commands::extract::run(&cfg, &args.common.out)?;
            println!(
                "{} prototypes ({} classes, {} scales) -> {}",
                repo.len(),
                repo.n_classes(),
                repo.n_scales(),
                Path::new(&args.common.out).join(commands::extract::REPOSITORY_FILE).display()
            );
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Usage as i32 } else { ExitCode::Success as i32 };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::Success as i32,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            code as i32
        }
    }
}
