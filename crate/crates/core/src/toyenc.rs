//! Synthetic domain-shift episodes, a frozen attention encoder and a
//! prototype nearest-neighbour scorer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{layer_profile, AttentionMatrix, DistanceProfile};
use crate::census::{ParameterCount, Trainable};
use crate::enhance::{cosine, dot, norm, softmax_with_temperature, EnhancementConfig, Enhancer};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Domain, FeatureMap, Scene};
use crate::linalg::Matrix;
use crate::prototypes::{accumulate_from_support, extract_background_prototype, PrototypeRepository, RepositoryMetadata};
use crate::tsa::SYNTHETIC_CLASSES;

const SCORE_EPSILON: f64 = 1e-8;
const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Stream ids for the per-episode generators, so the style direction never
/// perturbs scene sampling.
const SCENE_STREAM: u64 = 0;
const STYLE_STREAM: u64 = 1;

/// Per-episode shift applied on top of the clean class/background model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub style_offset: Vec<f64>,
    pub clutter_level: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ShiftSpec {
    /// Zero offset and no clutter.
    pub fn null(dim: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            style_offset: vec![0.0; dim],
            clutter_level: 0.0,
            noise_sigma,
            seed,
        }
    }

    /// Offset along a seeded random direction with the given magnitude.
    pub fn with_style_magnitude(dim: usize, magnitude: f64, clutter_level: f64, noise_sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STYLE_STREAM);
        let dir = random_direction(&mut rng, dim);
        Self {
            style_offset: dir.into_iter().map(|v| v * magnitude).collect(),
            clutter_level,
            noise_sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.clutter_level) {
            return Err(Error::invalid("clutter_level", format!("must be in [0, 1], got {}", self.clutter_level)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma", format!("must be ≥ 0, got {}", self.noise_sigma)));
        }
        if self.style_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("style offset".into()));
        }
        Ok(())
    }
}

/// Episode geometry and the clean generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub shots: usize,
    pub n_query: usize,
    pub min_side: usize,
    pub max_side: usize,
    /// Norm of each class mean.
    pub class_norm: f64,
    /// Norm of the background mean.
    pub background_norm: f64,
    /// Upper bound of the uniform strength with which a cluttered background
    /// cell moves towards a random class mean.
    pub clutter_strength: f64,
    pub domain: Domain,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            dim: 16,
            n_classes: 3,
            shots: 5,
            n_query: 4,
            min_side: 3,
            max_side: 6,
            class_norm: 3.0,
            background_norm: 2.5,
            clutter_strength: 1.0,
            domain: Domain::Target,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::invalid("shots", "K must be ≥ 1"));
        }
        if self.n_classes == 0 || self.n_classes > SYNTHETIC_CLASSES.len() {
            return Err(Error::invalid(
                "n_classes",
                format!("must be in 1..={}, got {}", SYNTHETIC_CLASSES.len(), self.n_classes),
            ));
        }
        if self.dim == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("episode geometry", "grid and dim must be positive"));
        }
        if self.min_side == 0 || self.min_side > self.max_side {
            return Err(Error::invalid(
                "box sides",
                format!("need 1 ≤ min_side ≤ max_side, got {}..={}", self.min_side, self.max_side),
            ));
        }
        if self.max_side > self.height || self.max_side > self.width {
            return Err(Error::GridTooSmall(format!(
                "box side up to {} does not fit a {}x{} grid",
                self.max_side, self.height, self.width
            )));
        }
        if self.n_classes * self.min_side * self.min_side > self.height * self.width {
            return Err(Error::GridTooSmall(format!(
                "{} boxes of side ≥ {} cannot fit a {}x{} grid",
                self.n_classes, self.min_side, self.height, self.width
            )));
        }
        for (what, v) in [
            ("class_norm", self.class_norm),
            ("background_norm", self.background_norm),
            ("clutter_strength", self.clutter_strength),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(what, format!("must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        SYNTHETIC_CLASSES[..self.n_classes].iter().map(|c| c.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub support: Vec<Scene>,
    pub query: Vec<Scene>,
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn place_boxes(rng: &mut ChaCha8Rng, spec: &EpisodeSpec) -> Result<Vec<BBox>> {
    let mut placed: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(spec.n_classes);
    let mut boxes = Vec::with_capacity(spec.n_classes);
    for c in 0..spec.n_classes {
        let mut found = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let h = rng.random_range(spec.min_side..=spec.max_side);
            let w = rng.random_range(spec.min_side..=spec.max_side);
            let y = rng.random_range(0..=spec.height - h);
            let x = rng.random_range(0..=spec.width - w);
            let clear = placed
                .iter()
                .all(|&(ox0, oy0, ox1, oy1)| x >= ox1 || ox0 >= x + w || y >= oy1 || oy0 >= y + h);
            if clear {
                found = Some((x, y, x + w, y + h));
                break;
            }
        }
        let (x0, y0, x1, y1) = found.ok_or_else(|| {
            Error::GridTooSmall(format!(
                "could not place box for class {c} on a {}x{} grid after {PLACEMENT_ATTEMPTS} attempts",
                spec.height, spec.width
            ))
        })?;
        placed.push((x0, y0, x1, y1));
        boxes.push(BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64, c)?);
    }
    Ok(boxes)
}

/// Draws every scene of an episode from one seeded stream. The number of
/// random draws does not depend on the shift, so a null shift reproduces
/// the unshifted scenes bit for bit.
pub fn generate_episode(shift: &ShiftSpec, spec: &EpisodeSpec) -> Result<Episode> {
    spec.validate()?;
    shift.validate()?;
    if shift.style_offset.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            context: "style offset",
            expected: spec.dim,
            got: shift.style_offset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(shift.seed);
    rng.set_stream(SCENE_STREAM);
    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| random_direction(&mut rng, spec.dim).into_iter().map(|v| v * spec.class_norm).collect())
        .collect();
    let bg: Vec<f64> = random_direction(&mut rng, spec.dim)
        .into_iter()
        .map(|v| v * spec.background_norm)
        .collect();
    let classes = spec.class_names();
    let d = spec.dim;

    let scene = |rng: &mut ChaCha8Rng| -> Result<Scene> {
        let boxes = place_boxes(rng, spec)?;
        let n = spec.height * spec.width;
        let mut label = vec![None; n];
        for b in &boxes {
            for y in b.y_min as usize..b.y_max as usize {
                for x in b.x_min as usize..b.x_max as usize {
                    label[y * spec.width + x] = Some(b.class_id);
                }
            }
        }
        let mut data = Vec::with_capacity(n * d);
        for l in &label {
            data.extend_from_slice(l.map_or(&bg, |c| &means[c]));
        }
        for v in data.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += shift.noise_sigma * z;
        }
        for (cell, l) in label.iter().enumerate() {
            let hit = rng.random::<f64>() < shift.clutter_level;
            let c = rng.random_range(0..spec.n_classes);
            let strength = rng.random::<f64>() * spec.clutter_strength;
            if hit && l.is_none() {
                for k in 0..d {
                    data[cell * d + k] += strength * (means[c][k] - bg[k]);
                }
            }
        }
        for cell in data.chunks_exact_mut(d) {
            for (v, o) in cell.iter_mut().zip(&shift.style_offset) {
                *v += o;
            }
        }
        let map = FeatureMap::new(spec.height, spec.width, d, 0, data)?;
        Scene::new(vec![map], boxes, classes.clone(), spec.domain, shift.seed)
    };

    let support = (0..spec.shots).map(|_| scene(&mut rng)).collect::<Result<Vec<_>>>()?;
    let query = (0..spec.n_query).map(|_| scene(&mut rng)).collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        seed: shift.seed,
        support,
        query,
    })
}

/// Frozen single-head attention stack over grid cells.
///
/// Logits are `(XW)(XW)ᵀ/√D − penalty·‖pᵢ − pⱼ‖`; values are the tokens
/// themselves, so each layer is `X ← softmax(logits)·X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub dim: usize,
    pub query_key: Vec<Matrix>,
    pub distance_penalty: f64,
}

pub const DEFAULT_ENCODER_SEED: u64 = 1000;
pub const DEFAULT_ENCODER_LAYERS: usize = 2;
pub const DEFAULT_DISTANCE_PENALTY: f64 = 0.25;

impl ToyEncoder {
    pub fn new(dim: usize, n_layers: usize, distance_penalty: f64, seed: u64) -> Result<Self> {
        if dim == 0 || n_layers == 0 {
            return Err(Error::invalid("encoder", "dim and n_layers must be ≥ 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let query_key = (0..n_layers)
            .map(|_| {
                let data = (0..dim * dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
                Matrix::new(dim, dim, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_maps(query_key, distance_penalty)
    }

    pub fn from_maps(query_key: Vec<Matrix>, distance_penalty: f64) -> Result<Self> {
        let dim = query_key.first().map(Matrix::rows).ok_or_else(|| Error::invalid("encoder", "no layers"))?;
        if query_key.iter().any(|m| m.rows() != dim || m.cols() != dim) {
            return Err(Error::invalid("encoder", "every query/key map must be dim × dim"));
        }
        if !(distance_penalty >= 0.0) || !distance_penalty.is_finite() {
            return Err(Error::invalid("distance_penalty", format!("must be ≥ 0, got {distance_penalty}")));
        }
        Ok(Self {
            dim,
            query_key,
            distance_penalty,
        })
    }

    /// Zero query/key maps and no distance term: every row is uniform.
    pub fn zeroed(dim: usize, n_layers: usize) -> Result<Self> {
        Self::from_maps(vec![Matrix::zeros(dim, dim); n_layers], 0.0)
    }

    pub fn n_layers(&self) -> usize {
        self.query_key.len()
    }
}

impl Default for ToyEncoder {
    fn default() -> Self {
        Self::new(16, DEFAULT_ENCODER_LAYERS, DEFAULT_DISTANCE_PENALTY, DEFAULT_ENCODER_SEED)
            .expect("default encoder is valid")
    }
}

impl Trainable for ToyEncoder {
    fn parameter_count(&self) -> ParameterCount {
        ParameterCount::frozen(self.query_key.iter().map(Matrix::len).sum())
    }
}

pub fn encode_with_attention(map: &FeatureMap, enc: &ToyEncoder) -> Result<(FeatureMap, Vec<AttentionMatrix>)> {
    if map.dim() != enc.dim {
        return Err(Error::DimensionMismatch {
            context: "encoder width",
            expected: enc.dim,
            got: map.dim(),
        });
    }
    let n = map.n_cells();
    let d = map.dim();
    let positions = AttentionMatrix::grid_positions(map.height(), map.width());
    let mut dist = vec![0.0; n * n];
    if enc.distance_penalty != 0.0 {
        for i in 0..n {
            for j in 0..n {
                let dy = positions[i][0] - positions[j][0];
                let dx = positions[i][1] - positions[j][1];
                dist[i * n + j] = (dy * dy + dx * dx).sqrt();
            }
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut x = Matrix::new(n, d, map.data().to_vec())?;
    let mut dump = Vec::with_capacity(enc.n_layers());
    for (l, wq) in enc.query_key.iter().enumerate() {
        let q = x.matmul(wq)?;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut a[i * n..(i + 1) * n];
            let qi = q.row(i);
            for (j, r) in row.iter_mut().enumerate() {
                *r = dot(qi, q.row(j)) * scale - enc.distance_penalty * dist[i * n + j];
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in row.iter_mut() {
                *r = (*r - m).exp();
                total += *r;
            }
            row.iter_mut().for_each(|r| *r /= total);
        }
        let attn = Matrix::new(n, n, a)?;
        x = attn.matmul(&x)?;
        dump.push(AttentionMatrix::new(format!("layer_{l}"), positions.clone(), 1, attn.data().to_vec())?);
    }
    let out = FeatureMap::new(map.height(), map.width(), d, map.scale_id(), x.data().to_vec())?;
    Ok((out, dump))
}

/// Encodes every scale of a scene, keeping annotations.
pub fn encode_scene(scene: &Scene, enc: &ToyEncoder) -> Result<(Scene, Vec<Vec<AttentionMatrix>>)> {
    let mut maps = Vec::with_capacity(scene.n_scales());
    let mut dumps = Vec::with_capacity(scene.n_scales());
    for m in scene.maps() {
        let (out, dump) = encode_with_attention(m, enc)?;
        maps.push(out);
        dumps.push(dump);
    }
    Ok((scene.with_maps(maps)?, dumps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellPrediction {
    /// `None` is background.
    pub label: Option<usize>,
    pub confidence: f64,
}

/// Per-cell argmax of cosine similarity over the class prototypes followed by
/// the background prototype; ties keep the earlier (foreground) entry.
pub fn prototype_score(map: &FeatureMap, repo: &PrototypeRepository) -> Result<Vec<CellPrediction>> {
    let scale = map.scale_id();
    let fg = repo.foreground(scale)?;
    let bg = repo.background(scale)?;
    if repo.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            context: "repository vs feature dim",
            expected: map.dim(),
            got: repo.dim(),
        });
    }
    Ok(map
        .cells()
        .map(|cell| {
            let mut best = CellPrediction {
                label: None,
                confidence: f64::NEG_INFINITY,
            };
            for (c, p) in fg.iter().enumerate() {
                let s = cosine(cell, &p.vector, SCORE_EPSILON);
                if s > best.confidence {
                    best = CellPrediction {
                        label: Some(c),
                        confidence: s,
                    };
                }
            }
            let s = cosine(cell, &bg.vector, SCORE_EPSILON);
            if s > best.confidence {
                best = CellPrediction {
                    label: None,
                    confidence: s,
                };
            }
            best
        })
        .collect())
}

/// Macro F1 over foreground classes appearing in either the prediction or the
/// ground truth. 1.0 when neither contains any foreground.
pub fn per_cell_f1(predicted: &[Option<usize>], truth: &[Option<usize>], n_classes: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "per-cell F1 labels",
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (p, t) in predicted.iter().zip(truth) {
        if let Some(c) = p.iter().chain(t).find(|&&c| c >= n_classes) {
            return Err(Error::invalid("label", format!("class {c} outside {n_classes} classes")));
        }
        match (p, t) {
            (Some(a), Some(b)) if a == b => tp[*a] += 1,
            _ => {
                if let Some(a) = p {
                    fp[*a] += 1;
                }
                if let Some(b) = t {
                    fn_[*b] += 1;
                }
            }
        }
    }
    let scores: Vec<f64> = (0..n_classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    if scores.is_empty() {
        return Ok(1.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean per-cell cross-entropy of the temperature softmax over prototype
/// cosines (classes then background) against ground-truth labels. Used as
/// the gradient-free detector's loss.
pub fn detection_proxy_loss(scenes: &[Scene], repo: &PrototypeRepository, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", format!("must be > 0, got {temperature}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for scene in scenes {
        let labels = scene.cell_labels()?;
        for map in scene.maps() {
            let mut protos = repo.foreground(map.scale_id())?;
            protos.push(repo.background(map.scale_id())?);
            let bg_index = protos.len() - 1;
            for (cell, label) in map.cells().zip(&labels) {
                let sims: Vec<f64> = protos.iter().map(|p| cosine(cell, &p.vector, SCORE_EPSILON)).collect();
                let w = softmax_with_temperature(&sims, temperature);
                total -= w[label.unwrap_or(bg_index)].ln();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("detection loss", "no cells"));
    }
    Ok(total / count as f64)
}

/// One row per scene: the mean feature over that scene's background cells
/// at `scale`.
pub fn background_rows(scenes: &[Scene], scale: usize) -> Result<Matrix> {
    let rows = scenes
        .iter()
        .map(|s| {
            let map = s
                .map(scale)
                .ok_or_else(|| Error::MissingPrototype(format!("scene has no scale {scale}")))?;
            Ok(extract_background_prototype(map, s.boxes())?.vector)
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub query_index: usize,
    pub f1_baseline: f64,
    pub f1_enhanced: f64,
    pub dist_baseline: f64,
    pub dist_enhanced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_seed: u64,
    pub f1_baseline: f64,
    pub f1_enhanced: f64,
    pub dist_baseline: f64,
    pub dist_enhanced: f64,
    pub profile_baseline: DistanceProfile,
    pub profile_enhanced: DistanceProfile,
    pub per_image: Vec<ImageMetrics>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Branch {
    f1: Vec<f64>,
    profiles: Vec<DistanceProfile>,
}

fn score_branch(
    support: &[Scene],
    query: &[Scene],
    enc: &ToyEncoder,
    n_classes: usize,
    meta: RepositoryMetadata,
) -> Result<Branch> {
    let encoded = support
        .iter()
        .map(|s| encode_scene(s, enc).map(|(e, _)| e))
        .collect::<Result<Vec<_>>>()?;
    let repo = accumulate_from_support(&encoded, meta)?;
    let mut f1 = Vec::with_capacity(query.len());
    let mut profiles = Vec::with_capacity(query.len());
    for q in query {
        let (out, dumps) = encode_scene(q, enc)?;
        let pred: Vec<Option<usize>> = prototype_score(&out.maps()[0], &repo)?.into_iter().map(|p| p.label).collect();
        f1.push(per_cell_f1(&pred, &q.cell_labels()?, n_classes)?);
        profiles.push(layer_profile(&dumps[0])?);
    }
    Ok(Branch { f1, profiles })
}

/// Baseline: score encoder outputs against prototypes pooled from encoded
/// support. Enhanced: refine support and queries with the raw-support
/// repository first, then do the same. Distances are the mean over layers
/// of the per-layer attention distance, averaged over queries.
pub fn evaluate_episode(
    episode: &Episode,
    config: &EnhancementConfig,
    enc: &ToyEncoder,
    with_enhancement: bool,
) -> Result<EpisodeMetrics> {
    config.validate()?;
    let first = episode
        .support
        .first()
        .ok_or_else(|| Error::EmptySupportRegion("episode has no support scenes".into()))?;
    if episode.query.is_empty() {
        return Err(Error::invalid("episode", "no query scenes"));
    }
    let n_classes = first.classes().len();
    let meta = RepositoryMetadata {
        seed: episode.seed,
        shots: episode.support.len(),
    };
    let baseline = score_branch(&episode.support, &episode.query, enc, n_classes, meta)?;
    let enhanced = if with_enhancement {
        let raw_repo = accumulate_from_support(&episode.support, meta)?;
        let enhancer = Enhancer::new(&raw_repo, *config)?;
        let support = episode
            .support
            .iter()
            .map(|s| enhancer.enhance_scene(s))
            .collect::<Result<Vec<_>>>()?;
        let query = episode
            .query
            .iter()
            .map(|s| enhancer.enhance_scene(s))
            .collect::<Result<Vec<_>>>()?;
        score_branch(&support, &query, enc, n_classes, meta)?
    } else {
        Branch {
            f1: baseline.f1.clone(),
            profiles: baseline.profiles.clone(),
        }
    };
    let per_image: Vec<ImageMetrics> = (0..episode.query.len())
        .map(|i| ImageMetrics {
            query_index: i,
            f1_baseline: baseline.f1[i],
            f1_enhanced: enhanced.f1[i],
            dist_baseline: baseline.profiles[i].mean(),
            dist_enhanced: enhanced.profiles[i].mean(),
        })
        .collect();
    let dist_b: Vec<f64> = per_image.iter().map(|m| m.dist_baseline).collect();
    let dist_e: Vec<f64> = per_image.iter().map(|m| m.dist_enhanced).collect();
    Ok(EpisodeMetrics {
        episode_seed: episode.seed,
        f1_baseline: mean(&baseline.f1),
        f1_enhanced: mean(&enhanced.f1),
        dist_baseline: mean(&dist_b),
        dist_enhanced: mean(&dist_e),
        profile_baseline: DistanceProfile::average(&baseline.profiles)?,
        profile_enhanced: DistanceProfile::average(&enhanced.profiles)?,
        per_image,
    })
}

/// Everything needed to regenerate and score a suite of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub episode: EpisodeSpec,
    pub style_magnitude: f64,
    pub clutter_level: f64,
    pub noise_sigma: f64,
    pub encoder_seed: u64,
    pub encoder_layers: usize,
    pub distance_penalty: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeSpec::default(),
            style_magnitude: 1.0,
            clutter_level: 0.2,
            noise_sigma: 0.3,
            encoder_seed: DEFAULT_ENCODER_SEED,
            encoder_layers: DEFAULT_ENCODER_LAYERS,
            distance_penalty: DEFAULT_DISTANCE_PENALTY,
        }
    }
}

impl SuiteConfig {
    pub fn shift(&self, seed: u64) -> ShiftSpec {
        ShiftSpec::with_style_magnitude(
            self.episode.dim,
            self.style_magnitude,
            self.clutter_level,
            self.noise_sigma,
            seed,
        )
    }

    pub fn encoder(&self) -> Result<ToyEncoder> {
        ToyEncoder::new(self.episode.dim, self.encoder_layers, self.distance_penalty, self.encoder_seed)
    }

    pub fn generate(&self, seed: u64) -> Result<Episode> {
        generate_episode(&self.shift(seed), &self.episode)
    }

    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.shift(0).validate()?;
        if !(self.style_magnitude >= 0.0) || !self.style_magnitude.is_finite() {
            return Err(Error::invalid("style_magnitude", format!("must be ≥ 0, got {}", self.style_magnitude)));
        }
        if self.encoder_layers == 0 {
            return Err(Error::invalid("encoder_layers", "must be ≥ 1"));
        }
        if !(self.distance_penalty >= 0.0) || !self.distance_penalty.is_finite() {
            return Err(Error::invalid("distance_penalty", format!("must be ≥ 0, got {}", self.distance_penalty)));
        }
        Ok(())
    }
}

/// Generates and evaluates each seed in parallel; results come back in seed order.
pub fn evaluate_suite(
    suite: &SuiteConfig,
    seeds: &[u64],
    config: &EnhancementConfig,
    with_enhancement: bool,
) -> Result<Vec<Result<EpisodeMetrics>>> {
    suite.validate()?;
    config.validate()?;
    let enc = suite.encoder()?;
    Ok(seeds
        .par_iter()
        .map(|&seed| suite.generate(seed).and_then(|ep| evaluate_episode(&ep, config, &enc, with_enhancement)))
        .collect())
}

/// Evaluates already-materialized episodes in parallel, preserving order.
pub fn evaluate_episodes(
    episodes: &[Episode],
    config: &EnhancementConfig,
    enc: &ToyEncoder,
    with_enhancement: bool,
) -> Vec<Result<EpisodeMetrics>> {
    episodes
        .par_iter()
        .map(|ep| evaluate_episode(ep, config, enc, with_enhancement))
        .collect()
}

/// Baseline attention distance of the query scenes, averaged; no scoring.
pub fn baseline_query_distance(episode: &Episode, enc: &ToyEncoder) -> Result<f64> {
    let d = episode
        .query
        .iter()
        .map(|q| encode_scene(q, enc).and_then(|(_, dumps)| Ok(layer_profile(&dumps[0])?.mean())))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&d))
}
