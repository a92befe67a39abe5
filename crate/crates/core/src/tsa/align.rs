//! Projection-space contrastive alignment between visual background features
//! and negative-text embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::select_background_texts;
use crate::census::{ParameterCount, Trainable};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_TAU_CTR: f64 = 0.1;
pub const DEFAULT_LAMBDA_BG: f64 = 1000.0;

/// Lower bound on the denominator of the relative error used by
/// [`check_gradients`], so entries that are zero in both gradients don't
/// blow up the ratio.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentState {
    pub proj_v: Matrix,
    pub proj_t: Matrix,
    pub tau_ctr: f64,
    pub lambda_bg: f64,
    pub step_count: u64,
}

impl AlignmentState {
    /// Seeded uniform init in `[-1/√d_s, 1/√d_s]`; `proj_v` is drawn first.
    pub fn init(d_v: usize, d_t: usize, d_s: usize, tau_ctr: f64, lambda_bg: f64, seed: u64) -> Result<Self> {
        if d_v == 0 || d_t == 0 || d_s == 0 {
            return Err(Error::invalid("projection dims", "must all be ≥ 1"));
        }
        let bound = 1.0 / (d_s as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let proj_v = Matrix::new(d_v, d_s, draw(d_v * d_s))?;
        let proj_t = Matrix::new(d_t, d_s, draw(d_t * d_s))?;
        let state = Self {
            proj_v,
            proj_t,
            tau_ctr,
            lambda_bg,
            step_count: 0,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_ctr > 0.0) || !self.tau_ctr.is_finite() {
            return Err(Error::invalid("tau_ctr", format!("must be > 0, got {}", self.tau_ctr)));
        }
        if !(self.lambda_bg >= 0.0) || !self.lambda_bg.is_finite() {
            return Err(Error::invalid("lambda_bg", format!("must be ≥ 0, got {}", self.lambda_bg)));
        }
        if self.proj_v.cols() != self.proj_t.cols() {
            return Err(Error::DimensionMismatch {
                context: "shared projection dim",
                expected: self.proj_v.cols(),
                got: self.proj_t.cols(),
            });
        }
        if !self.proj_v.all_finite() || !self.proj_t.all_finite() {
            return Err(Error::NonFinite("projection weights".into()));
        }
        Ok(())
    }

    pub fn visual_dim(&self) -> usize {
        self.proj_v.rows()
    }

    pub fn text_dim(&self) -> usize {
        self.proj_t.rows()
    }

    pub fn shared_dim(&self) -> usize {
        self.proj_v.cols()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "alignment state".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "alignment state".into(),
            source,
        })?;
        state.validate()?;
        Ok(state)
    }
}

impl Trainable for AlignmentState {
    fn parameter_count(&self) -> ParameterCount {
        ParameterCount::trainable(self.proj_v.len() + self.proj_t.len())
    }
}

fn check_input(what: &'static str, m: &Matrix, proj: &Matrix) -> Result<()> {
    if m.cols() != proj.rows() {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: proj.rows(),
            got: m.cols(),
        });
    }
    Ok(())
}

/// `S = (V·Pv)(T·Pt)ᵀ`.
pub fn alignment_similarity(visual: &Matrix, text: &Matrix, state: &AlignmentState) -> Result<Matrix> {
    check_input("visual feature dim", visual, &state.proj_v)?;
    check_input("text feature dim", text, &state.proj_t)?;
    let zv = visual.matmul(&state.proj_v)?;
    let zt = text.matmul(&state.proj_t)?;
    zv.matmul_transposed(&zt)
}

/// `Σ_k −log(exp(S_kk/τ) / Σ_ij exp(S_ij/τ))` and its gradient with respect to `S`.
pub fn contrastive_loss(s: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    if s.rows() != s.cols() {
        return Err(Error::DimensionMismatch {
            context: "contrastive loss needs a square matrix",
            expected: s.rows(),
            got: s.cols(),
        });
    }
    if s.is_empty() {
        return Err(Error::invalid("similarity matrix", "empty"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau_ctr", format!("must be > 0, got {tau}")));
    }
    let n = s.rows();
    let z: Vec<f64> = s.data().iter().map(|v| v / tau).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let loss: f64 = (0..n).map(|k| lse - z[k * n + k]).sum();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("contrastive loss (max logit {m})")));
    }
    let nf = n as f64;
    let mut grad = Matrix::zeros(n, n);
    for (g, v) in grad.data_mut().iter_mut().zip(&z) {
        *g = nf * (v - lse).exp() / tau;
    }
    for k in 0..n {
        let g = grad.get(k, k) - 1.0 / tau;
        grad.set(k, k, g);
    }
    Ok((loss, grad))
}

pub fn total_loss(detection_loss: f64, ctr_loss: f64, lambda_bg: f64) -> f64 {
    detection_loss + lambda_bg * ctr_loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGradients {
    pub loss: f64,
    pub similarity: Matrix,
    pub grad_s: Matrix,
    pub grad_proj_v: Matrix,
    pub grad_proj_t: Matrix,
}

/// Loss plus chain-rule gradients: `∂L/∂Pv = Vᵀ(G·Zt)`, `∂L/∂Pt = Tᵀ(Gᵀ·Zv)`.
pub fn alignment_gradients(visual: &Matrix, text: &Matrix, state: &AlignmentState) -> Result<AlignmentGradients> {
    check_input("visual feature dim", visual, &state.proj_v)?;
    check_input("text feature dim", text, &state.proj_t)?;
    let zv = visual.matmul(&state.proj_v)?;
    let zt = text.matmul(&state.proj_t)?;
    let similarity = zv.matmul_transposed(&zt)?;
    let (loss, grad_s) = contrastive_loss(&similarity, state.tau_ctr)?;
    let grad_proj_v = visual.transpose().matmul(&grad_s.matmul(&zt)?)?;
    let grad_proj_t = text.transpose().matmul(&grad_s.transpose().matmul(&zv)?)?;
    Ok(AlignmentGradients {
        loss,
        similarity,
        grad_s,
        grad_proj_v,
        grad_proj_t,
    })
}

/// Plain gradient descent on both projections. Returns the loss after
/// `k` updates for every `k` in `0..=steps`.
pub fn optimize_alignment(
    state: &mut AlignmentState,
    visual: &Matrix,
    text: &Matrix,
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<f64>> {
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::invalid("learning_rate", format!("must be ≥ 0, got {learning_rate}")));
    }
    state.validate()?;
    let mut trace = Vec::with_capacity(steps + 1);
    let mut g = alignment_gradients(visual, text, state)?;
    trace.push(g.loss);
    for step in 0..steps {
        state.proj_v.axpy(-learning_rate, &g.grad_proj_v)?;
        state.proj_t.axpy(-learning_rate, &g.grad_proj_t)?;
        state.step_count += 1;
        g = alignment_gradients(visual, text, state).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("{msg} after step {}", step + 1)),
            other => other,
        })?;
        trace.push(g.loss);
    }
    Ok(trace)
}

/// Text batch paired with the visual rows: row `i` is the selection-weighted
/// mix of bank embeddings for visual row `i`, with weights computed in the
/// shared projection space.
pub fn select_text_batch(
    visual: &Matrix,
    bank: &Matrix,
    state: &AlignmentState,
    temperature: f64,
) -> Result<Matrix> {
    check_input("visual feature dim", visual, &state.proj_v)?;
    check_input("text feature dim", bank, &state.proj_t)?;
    let zv = visual.matmul(&state.proj_v)?;
    let zt = bank.matmul(&state.proj_t)?;
    let mut out = Matrix::zeros(visual.rows(), bank.cols());
    for i in 0..visual.rows() {
        let w = select_background_texts(zv.row(i), &zt, temperature)?;
        for (k, wk) in w.iter().enumerate() {
            for (c, t) in bank.row(k).iter().enumerate() {
                let v = out.get(i, c) + wk * t;
                out.set(i, c, v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub max_rel_error_s: f64,
    pub max_rel_error_proj_v: f64,
    pub max_rel_error_proj_t: f64,
}

impl GradientCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_s.max(self.max_rel_error_proj_v).max(self.max_rel_error_proj_t)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn fd_max_error(param: &Matrix, analytic: &Matrix, h: f64, mut loss_at: impl FnMut(&Matrix) -> Result<f64>) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut p = param.clone();
    for i in 0..p.len() {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + h;
        let up = loss_at(&p)?;
        p.data_mut()[i] = orig - h;
        let down = loss_at(&p)?;
        p.data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic.data()[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Central finite differences against every analytic gradient entry.
pub fn check_gradients(visual: &Matrix, text: &Matrix, state: &AlignmentState, h: f64) -> Result<GradientCheck> {
    let g = alignment_gradients(visual, text, state)?;
    let tau = state.tau_ctr;
    let max_rel_error_s = fd_max_error(&g.similarity, &g.grad_s, h, |s| Ok(contrastive_loss(s, tau)?.0))?;
    let mut probe = state.clone();
    let max_rel_error_proj_v = fd_max_error(&state.proj_v, &g.grad_proj_v, h, |pv| {
        probe.proj_v = pv.clone();
        Ok(contrastive_loss(&alignment_similarity(visual, text, &probe)?, tau)?.0)
    })?;
    let mut probe = state.clone();
    let max_rel_error_proj_t = fd_max_error(&state.proj_t, &g.grad_proj_t, h, |pt| {
        probe.proj_t = pt.clone();
        Ok(contrastive_loss(&alignment_similarity(visual, text, &probe)?, tau)?.0)
    })?;
    Ok(GradientCheck {
        max_rel_error_s,
        max_rel_error_proj_v,
        max_rel_error_proj_t,
    })
}

/// Seeded standard-normal matrix, handy for gradient checks and benches.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).expect("shape matches data")
}
