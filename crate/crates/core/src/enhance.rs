//! Prototype-driven feature refinement.
//!
//! The positive branch pulls cells that resemble a class prototype toward a
//! softmax blend of the class prototypes; the negative branch pulls cells
//! that resemble the background toward the unified background prototype.
//! [`fuse`] merges both branches and passes untouched cells through.

use serde::{Deserialize, Serialize};

use crate::census::{ParameterCount, Trainable};
use crate::error::{Error, Result};
use crate::geometry::{FeatureMap, GridDims, RegionMask, Scene, SceneDocument};
use crate::prototypes::{Prototype, PrototypeRepository};

/// Thresholds, strengths and softmax temperature for the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancementConfig {
    pub tau_fg: f64,
    pub tau_bg: f64,
    pub gamma_fg: f64,
    pub gamma_bg: f64,
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self {
            tau_fg: 0.75,
            tau_bg: 0.75,
            gamma_fg: 0.5,
            gamma_bg: 0.5,
            temperature: 1.0,
            epsilon: 1e-8,
        }
    }
}

impl EnhancementConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |t: f64| t > -1.0 && t <= 1.0;
        if !in_range(self.tau_fg) || !in_range(self.tau_bg) {
            return Err(Error::invalid(
                "enhancement config",
                format!("thresholds must lie in (-1, 1], got {} / {}", self.tau_fg, self.tau_bg),
            ));
        }
        if !(self.gamma_fg >= 0.0 && self.gamma_bg >= 0.0)
            || !self.gamma_fg.is_finite()
            || !self.gamma_bg.is_finite()
        {
            return Err(Error::invalid(
                "enhancement config",
                format!("weights must be finite and >= 0, got {} / {}", self.gamma_fg, self.gamma_bg),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(
                "enhancement config",
                format!("temperature must be > 0, got {}", self.temperature),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(
                "enhancement config",
                format!("epsilon must be > 0, got {}", self.epsilon),
            ));
        }
        Ok(())
    }

    /// Same thresholds and temperature, zero strength on both branches.
    pub fn with_zero_strength(self) -> Self {
        Self {
            gamma_fg: 0.0,
            gamma_bg: 0.0,
            ..self
        }
    }
}

impl Trainable for EnhancementConfig {
    fn parameter_count(&self) -> ParameterCount {
        ParameterCount::NONE
    }
}

/// Per-cell values over one or more channels, stored cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityField {
    dims: GridDims,
    channels: usize,
    values: Vec<f64>,
}

impl SimilarityField {
    pub fn new(dims: GridDims, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("similarity field", "needs at least one channel"));
        }
        if values.len() != dims.n_cells() * channels {
            return Err(Error::DimensionMismatch {
                context: "similarity field",
                expected: dims.n_cells() * channels,
                got: values.len(),
            });
        }
        Ok(Self { dims, channels, values })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.channels..(cell + 1) * self.channels]
    }

    /// Largest channel value at a cell.
    pub fn max_at(&self, cell: usize) -> f64 {
        self.at(cell).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest channel at a cell; ties go to the lower index.
    pub fn argmax_at(&self, cell: usize) -> usize {
        let row = self.at(cell);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        best
    }
}

/// Per-cell softmax weights over classes; same layout as [`SimilarityField`].
pub type WeightField = SimilarityField;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `f·p / (‖f‖·‖p‖ + ε)`.
pub fn cosine(f: &[f64], p: &[f64], epsilon: f64) -> f64 {
    dot(f, p) / (norm(f) * norm(p) + epsilon)
}

/// Cosine similarity of every cell against every prototype.
pub fn cosine_similarity_field(
    map: &FeatureMap,
    prototypes: &[&Prototype],
    epsilon: f64,
) -> Result<SimilarityField> {
    if prototypes.is_empty() {
        return Err(Error::invalid("similarity", "no prototypes given"));
    }
    for p in prototypes {
        if p.dim() != map.dim() {
            return Err(Error::DimensionMismatch {
                context: "prototype vs feature dim",
                expected: map.dim(),
                got: p.dim(),
            });
        }
    }
    let proto_norms: Vec<f64> = prototypes.iter().map(|p| norm(&p.vector)).collect();
    let mut values = Vec::with_capacity(map.n_cells() * prototypes.len());
    for cell in map.cells() {
        let cell_norm = norm(cell);
        for (p, pn) in prototypes.iter().zip(&proto_norms) {
            values.push(dot(cell, &p.vector) / (cell_norm * pn + epsilon));
        }
    }
    SimilarityField::new(map.dims(), prototypes.len(), values)
}

/// Softmax of `values / temperature`, with the maximum subtracted first.
pub fn softmax_with_temperature(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Temperature-scaled softmax across class channels at every cell.
pub fn class_weights(sim: &SimilarityField, temperature: f64) -> Result<WeightField> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", format!("must be > 0, got {temperature}")));
    }
    let mut values = Vec::with_capacity(sim.values.len());
    for cell in 0..sim.dims.n_cells() {
        values.extend(softmax_with_temperature(sim.at(cell), temperature));
    }
    SimilarityField::new(sim.dims, sim.channels, values)
}

/// Cells whose best similarity is strictly above `tau`.
pub fn threshold_mask(sim: &SimilarityField, tau: f64) -> RegionMask {
    let flags = (0..sim.dims.n_cells()).map(|c| sim.max_at(c) > tau).collect();
    RegionMask::new(sim.dims, flags).expect("field dims define the mask")
}

/// Output of one enhancement branch. `contribution` is zero outside `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub contribution: FeatureMap,
    pub mask: RegionMask,
    pub similarity: SimilarityField,
}

/// Positive branch: `f·M + γ_fg Σ_c w_c p_c · M`.
pub fn apply_ppr(map: &FeatureMap, repo: &PrototypeRepository, config: &EnhancementConfig) -> Result<BranchOutput> {
    let protos = repo.foreground(map.scale_id())?;
    let similarity = cosine_similarity_field(map, &protos, config.epsilon)?;
    let weights = class_weights(&similarity, config.temperature)?;
    let mask = threshold_mask(&similarity, config.tau_fg);
    let dim = map.dim();
    let mut out = vec![0.0; map.data().len()];
    let mut blend = vec![0.0; dim];
    for cell in mask.indices() {
        blend.iter_mut().for_each(|b| *b = 0.0);
        for (w, p) in weights.at(cell).iter().zip(&protos) {
            for (b, v) in blend.iter_mut().zip(&p.vector) {
                *b += w * v;
            }
        }
        let f = map.cell(cell);
        let dst = &mut out[cell * dim..(cell + 1) * dim];
        for k in 0..dim {
            dst[k] = f[k] + config.gamma_fg * blend[k];
        }
    }
    Ok(BranchOutput {
        contribution: FeatureMap::from_parts_unchecked(map.height(), map.width(), dim, map.scale_id(), out),
        mask,
        similarity,
    })
}

/// Negative branch: `f·M + γ_bg p_bg · M`, one unified background prototype.
pub fn apply_ncm(map: &FeatureMap, repo: &PrototypeRepository, config: &EnhancementConfig) -> Result<BranchOutput> {
    let bg = repo.background(map.scale_id())?;
    let similarity = cosine_similarity_field(map, &[bg], config.epsilon)?;
    let mask = threshold_mask(&similarity, config.tau_bg);
    let dim = map.dim();
    let mut out = vec![0.0; map.data().len()];
    for cell in mask.indices() {
        let f = map.cell(cell);
        let dst = &mut out[cell * dim..(cell + 1) * dim];
        for k in 0..dim {
            dst[k] = f[k] + config.gamma_bg * bg.vector[k];
        }
    }
    Ok(BranchOutput {
        contribution: FeatureMap::from_parts_unchecked(map.height(), map.width(), dim, map.scale_id(), out),
        mask,
        similarity,
    })
}

/// Which branch a cell took during fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionChoice {
    Passthrough,
    Positive,
    Negative,
}

/// Per-cell fusion rule: one mask → that branch; both → the branch with the
/// higher best similarity (ties go to the positive branch); neither → the
/// original feature.
pub fn fusion_choice(in_fg: bool, in_bg: bool, sim_fg: f64, sim_bg: f64) -> FusionChoice {
    match (in_fg, in_bg) {
        (false, false) => FusionChoice::Passthrough,
        (true, false) => FusionChoice::Positive,
        (false, true) => FusionChoice::Negative,
        (true, true) if sim_fg >= sim_bg => FusionChoice::Positive,
        (true, true) => FusionChoice::Negative,
    }
}

pub fn fuse(map: &FeatureMap, positive: &BranchOutput, negative: &BranchOutput) -> Result<FeatureMap> {
    for b in [positive, negative] {
        if b.contribution.dims() != map.dims() || b.contribution.dim() != map.dim() {
            return Err(Error::DimensionMismatch {
                context: "branch contribution vs feature map",
                expected: map.data().len(),
                got: b.contribution.data().len(),
            });
        }
    }
    let dim = map.dim();
    let mut out = Vec::with_capacity(map.data().len());
    for cell in 0..map.n_cells() {
        let choice = fusion_choice(
            positive.mask.get(cell),
            negative.mask.get(cell),
            positive.similarity.max_at(cell),
            negative.similarity.max_at(cell),
        );
        let src = match choice {
            FusionChoice::Passthrough => map.cell(cell),
            FusionChoice::Positive => positive.contribution.cell(cell),
            FusionChoice::Negative => negative.contribution.cell(cell),
        };
        out.extend_from_slice(src);
    }
    Ok(FeatureMap::from_parts_unchecked(map.height(), map.width(), dim, map.scale_id(), out))
}

/// Result of running both branches and fusing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Enhancement {
    pub map: FeatureMap,
    pub fg_mask: RegionMask,
    pub bg_mask: RegionMask,
}

/// Inference-time refiner over a fixed repository. Holds no trainable state.
#[derive(Debug, Clone, Copy)]
pub struct Enhancer<'a> {
    repo: &'a PrototypeRepository,
    config: EnhancementConfig,
}

impl<'a> Enhancer<'a> {
    pub fn new(repo: &'a PrototypeRepository, config: EnhancementConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { repo, config })
    }

    pub fn config(&self) -> &EnhancementConfig {
        &self.config
    }

    pub fn enhance_map(&self, map: &FeatureMap) -> Result<Enhancement> {
        let pos = apply_ppr(map, self.repo, &self.config)?;
        let neg = apply_ncm(map, self.repo, &self.config)?;
        let fused = fuse(map, &pos, &neg)?;
        Ok(Enhancement {
            map: fused,
            fg_mask: pos.mask,
            bg_mask: neg.mask,
        })
    }

    /// Enhances every scale of a scene, keeping its annotations.
    pub fn enhance_scene(&self, scene: &Scene) -> Result<Scene> {
        let maps = scene
            .maps()
            .iter()
            .map(|m| self.enhance_map(m).map(|e| e.map))
            .collect::<Result<Vec<_>>>()?;
        scene.with_maps(maps)
    }

    /// Scene document flagged as enhanced, with this configuration echoed.
    pub fn enhanced_document(&self, scene: &Scene) -> Result<SceneDocument> {
        let mut doc = self.enhance_scene(scene)?.to_document();
        doc.enhanced = true;
        doc.enhancement_config = Some(serde_json::to_value(self.config).map_err(|source| Error::Json {
            context: "enhancement config".into(),
            source,
        })?);
        Ok(doc)
    }
}

impl Trainable for Enhancer<'_> {
    fn parameter_count(&self) -> ParameterCount {
        ParameterCount::NONE
    }
}
