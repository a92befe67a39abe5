use std::fs;
use std::path::Path;

use fovea_core::census::ParameterCensus;
use fovea_core::prototypes::{accumulate_from_support, load_repository, RepositoryMetadata};
use fovea_core::toyenc::{background_rows, detection_proxy_loss};
use fovea_core::tsa::{
    builtin_bank, check_gradients, embed_text, optimize_alignment, select_text_batch, synthetic_bank, total_loss,
    AlignmentState, GradientCheck, TextBank, DEFAULT_BANK_SIZE,
};
use serde::Serialize;

use crate::config::{self, AlignConfig};
use crate::error::{CliError, CliResult};

pub const STATE_INIT_FILE: &str = "state_init.json";
pub const STATE_FILE: &str = "state.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignReport {
    pub pairs: usize,
    pub bank_domain: String,
    pub bank_entries: usize,
    pub steps: usize,
    pub initial_ctr_loss: f64,
    pub final_ctr_loss: f64,
    pub detection_loss: f64,
    pub lambda_bg: f64,
    pub total_loss_initial: f64,
    pub total_loss_final: f64,
    pub census: ParameterCensus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_check: Option<GradientCheck>,
}

fn load_bank(cfg: &AlignConfig) -> CliResult<TextBank> {
    match &cfg.bank {
        Some(path) => Ok(TextBank::load(path)?),
        None if cfg.domain == "synthetic" => {
            synthetic_bank(cfg.suite.episode.n_classes, DEFAULT_BANK_SIZE).map_err(CliError::from_config)
        }
        None => builtin_bank(&cfg.domain, DEFAULT_BANK_SIZE).map_err(CliError::from_config),
    }
}

fn validate(cfg: &AlignConfig) -> CliResult<()> {
    cfg.suite.validate().map_err(CliError::from_config)?;
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(CliError::usage(format!("learning_rate must be ≥ 0, got {}", cfg.learning_rate)));
    }
    for (what, v) in [
        ("selection_temperature", cfg.selection_temperature),
        ("detection_temperature", cfg.detection_temperature),
        ("grad_step", cfg.grad_step),
        ("grad_tolerance", cfg.grad_tolerance),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::usage(format!("{what} must be > 0, got {v}")));
        }
    }
    if cfg.shared_dim == 0 || cfg.embedder.dim == 0 {
        return Err(CliError::usage("shared_dim and embedder.dim must be ≥ 1"));
    }
    Ok(())
}

pub fn run(cfg: &AlignConfig, out: &Path) -> CliResult<AlignReport> {
    validate(cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    config::echo(cfg, out)?;

    let episode = cfg.suite.generate(cfg.seed).map_err(CliError::from_config)?;
    let repo = match &cfg.repository {
        Some(path) => load_repository(path)?,
        None => accumulate_from_support(
            &episode.support,
            RepositoryMetadata {
                seed: cfg.seed,
                shots: episode.support.len(),
            },
        )?,
    };
    let visual = background_rows(&episode.support, 0)?;
    let bank = load_bank(cfg)?;
    let bank_embeddings = embed_text(&bank, &cfg.embedder)?;

    let mut state = AlignmentState::init(
        visual.cols(),
        cfg.embedder.dim,
        cfg.shared_dim,
        cfg.tau_ctr,
        cfg.lambda_bg,
        cfg.seed,
    )
    .map_err(CliError::from_config)?;
    config::write_json(&state, &out.join(STATE_INIT_FILE))?;
    // text selection is made once, at the initial projections, and then held fixed
    let text = select_text_batch(&visual, &bank_embeddings, &state, cfg.selection_temperature)?;

    let gradient_check = if cfg.check_grad {
        Some(check_gradients(&visual, &text, &state, cfg.grad_step)?)
    } else {
        None
    };

    let trace = optimize_alignment(&mut state, &visual, &text, cfg.steps, cfg.learning_rate)?;
    config::write_json(&state, &out.join(STATE_FILE))?;
    let path = out.join(TRACE_FILE);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["step", "loss"])?;
    for (step, loss) in trace.iter().enumerate() {
        w.write_record([step.to_string(), loss.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let detection_loss = detection_proxy_loss(&episode.support, &repo, cfg.detection_temperature)?;
    let initial = trace[0];
    let last = *trace.last().expect("trace holds the initial loss");
    let report = AlignReport {
        pairs: visual.rows(),
        bank_domain: bank.domain.clone(),
        bank_entries: bank.entries.len(),
        steps: cfg.steps,
        initial_ctr_loss: initial,
        final_ctr_loss: last,
        detection_loss,
        lambda_bg: cfg.lambda_bg,
        total_loss_initial: total_loss(detection_loss, initial, cfg.lambda_bg),
        total_loss_final: total_loss(detection_loss, last, cfg.lambda_bg),
        census: crate::system_census(&repo, &cfg.suite.encoder().map_err(CliError::from_config)?, &state, &cfg.embedder),
        gradient_check,
    };
    config::write_json(&report, &out.join(REPORT_FILE))?;

    if let Some(check) = gradient_check {
        if !check.passes(cfg.grad_tolerance) {
            return Err(CliError::invariant(format!(
                "gradient check failed: max relative error {:e} ≥ {:e} (S {:e}, proj_v {:e}, proj_t {:e})",
                check.max_rel_error(),
                cfg.grad_tolerance,
                check.max_rel_error_s,
                check.max_rel_error_proj_v,
                check.max_rel_error_proj_t
            )));
        }
    }
    Ok(report)
}
