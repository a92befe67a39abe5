//! Foreground and background prototypes and their on-disk repository.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::census::{ParameterCount, Trainable};
use crate::error::{Error, Result};
use crate::geometry::{region_mask_from_boxes, FeatureMap, MaskMode, RegionMask, Scene};

pub const REPOSITORY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrototypeKind {
    Foreground(usize),
    Background,
}

/// Mean feature vector over a labelled region at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub vector: Vec<f64>,
    pub kind: PrototypeKind,
    pub scale_id: usize,
    pub support_count: usize,
}

impl Prototype {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Running per-channel sums for one region. Means are formed once, at the end.
#[derive(Debug, Clone)]
struct RegionSum {
    sum: Vec<f64>,
    count: usize,
}

impl RegionSum {
    fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            count: 0,
        }
    }

    fn add_cells<'a>(&mut self, cells: impl Iterator<Item = &'a [f64]>) {
        for cell in cells {
            for (s, v) in self.sum.iter_mut().zip(cell) {
                *s += v;
            }
            self.count += 1;
        }
    }

    fn merge(&mut self, other: &RegionSum) {
        for (s, v) in self.sum.iter_mut().zip(&other.sum) {
            *s += v;
        }
        self.count += other.count;
    }

    fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

fn masked_sum(map: &FeatureMap, mask: &RegionMask) -> Result<RegionSum> {
    if mask.dims() != map.dims() {
        return Err(Error::DimensionMismatch {
            context: "mask cells vs feature map cells",
            expected: map.n_cells(),
            got: mask.dims().n_cells(),
        });
    }
    let mut acc = RegionSum::new(map.dim());
    acc.add_cells(mask.indices().map(|i| map.cell(i)));
    Ok(acc)
}

/// Mean feature over the masked cells of one class.
pub fn extract_foreground_prototype(
    map: &FeatureMap,
    mask: &RegionMask,
    class_id: usize,
) -> Result<Prototype> {
    let acc = masked_sum(map, mask)?;
    if acc.count == 0 {
        return Err(Error::EmptySupportRegion(format!("class {class_id}")));
    }
    Ok(Prototype {
        vector: acc.mean(),
        kind: PrototypeKind::Foreground(class_id),
        scale_id: map.scale_id(),
        support_count: acc.count,
    })
}

/// Mean feature over every cell outside all boxes, regardless of class.
pub fn extract_background_prototype(map: &FeatureMap, boxes: &[crate::geometry::BBox]) -> Result<Prototype> {
    let mask = region_mask_from_boxes(map.dims(), boxes, MaskMode::Background)?;
    let acc = masked_sum(map, &mask)?;
    if acc.count == 0 {
        return Err(Error::EmptyBackground);
    }
    Ok(Prototype {
        vector: acc.mean(),
        kind: PrototypeKind::Background,
        scale_id: map.scale_id(),
        support_count: acc.count,
    })
}

/// Provenance recorded alongside the prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RepositoryMetadata {
    pub seed: u64,
    pub shots: usize,
}

/// Foreground prototypes per (class, scale) and one background prototype per scale.
///
/// Holds derived statistics only; nothing in it is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeRepository {
    entries: BTreeMap<(PrototypeKind, usize), Prototype>,
    classes: Vec<String>,
    n_scales: usize,
    dim: usize,
    metadata: RepositoryMetadata,
}

impl PrototypeRepository {
    /// Builds a repository from explicit entries, enforcing key uniqueness
    /// and vocabulary membership.
    pub fn from_entries(
        classes: Vec<String>,
        n_scales: usize,
        metadata: RepositoryMetadata,
        prototypes: impl IntoIterator<Item = Prototype>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut dim = None;
        for p in prototypes {
            if let PrototypeKind::Foreground(c) = p.kind {
                if c >= classes.len() {
                    return Err(Error::invalid(
                        "prototype",
                        format!("class {c} is not in the {}-class vocabulary", classes.len()),
                    ));
                }
            }
            if p.scale_id >= n_scales {
                return Err(Error::invalid(
                    "prototype",
                    format!("scale {} exceeds the {n_scales} declared scales", p.scale_id),
                ));
            }
            if p.support_count == 0 || p.vector.is_empty() {
                return Err(Error::invalid("prototype", "empty support or vector"));
            }
            if p.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("prototype {:?} at scale {}", p.kind, p.scale_id)));
            }
            match dim {
                None => dim = Some(p.dim()),
                Some(d) if d != p.dim() => {
                    return Err(Error::DimensionMismatch {
                        context: "prototype vector",
                        expected: d,
                        got: p.dim(),
                    })
                }
                _ => {}
            }
            let key = (p.kind, p.scale_id);
            if entries.insert(key, p).is_some() {
                return Err(Error::invalid(
                    "repository",
                    format!("duplicate entry for {:?} at scale {}", key.0, key.1),
                ));
            }
        }
        Ok(Self {
            entries,
            classes,
            n_scales,
            dim: dim.unwrap_or(0),
            metadata,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metadata(&self) -> RepositoryMetadata {
        self.metadata
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Prototype> {
        self.entries.values()
    }

    pub fn get(&self, kind: PrototypeKind, scale_id: usize) -> Option<&Prototype> {
        self.entries.get(&(kind, scale_id))
    }

    pub fn background(&self, scale_id: usize) -> Result<&Prototype> {
        self.get(PrototypeKind::Background, scale_id)
            .ok_or_else(|| Error::MissingPrototype(format!("background prototype at scale {scale_id}")))
    }

    /// Foreground prototypes of every vocabulary class at one scale, in class order.
    pub fn foreground(&self, scale_id: usize) -> Result<Vec<&Prototype>> {
        if self.classes.is_empty() {
            return Err(Error::MissingPrototype(format!(
                "no foreground classes at scale {scale_id}"
            )));
        }
        (0..self.classes.len())
            .map(|c| {
                self.get(PrototypeKind::Foreground(c), scale_id).ok_or_else(|| {
                    Error::MissingPrototype(format!(
                        "foreground prototype for class `{}` at scale {scale_id}",
                        self.classes[c]
                    ))
                })
            })
            .collect()
    }

    /// Checks that every (class, scale) and every background scale is present.
    pub fn check_complete(&self) -> Result<()> {
        for s in 0..self.n_scales {
            self.background(s)?;
            self.foreground(s)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let entries = self
            .entries
            .values()
            .map(|p| {
                let vector = p
                    .vector
                    .iter()
                    .map(|v| RawValue::from_string(format_exact(*v)))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|source| Error::Json {
                        context: "prototype vector".into(),
                        source,
                    })?;
                let (kind, class_id) = match p.kind {
                    PrototypeKind::Foreground(c) => (EntryKind::Foreground, Some(c)),
                    PrototypeKind::Background => (EntryKind::Background, None),
                };
                Ok(EntryOut {
                    kind,
                    class_id,
                    scale_id: p.scale_id,
                    support_count: p.support_count,
                    vector,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let doc = RepositoryOut {
            version: REPOSITORY_VERSION,
            classes: &self.classes,
            scales: self.n_scales,
            dim: self.dim,
            seed: self.metadata.seed,
            shots: self.metadata.shots,
            entries,
        };
        serde_json::to_string_pretty(&doc).map_err(|source| Error::Json {
            context: "repository".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::CorruptRepository(format!("not valid JSON: {e}")))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptRepository("missing `version`".into()))?;
        if version != REPOSITORY_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: version.min(u32::MAX as u64) as u32,
                expected: REPOSITORY_VERSION,
            });
        }
        let doc: RepositoryIn = serde_json::from_value(value)
            .map_err(|e| Error::CorruptRepository(e.to_string()))?;
        let prototypes = doc
            .entries
            .into_iter()
            .map(|e| {
                let kind = match (e.kind, e.class_id) {
                    (EntryKind::Foreground, Some(c)) => PrototypeKind::Foreground(c),
                    (EntryKind::Background, None) => PrototypeKind::Background,
                    (EntryKind::Foreground, None) => {
                        return Err(Error::CorruptRepository("foreground entry without class_id".into()))
                    }
                    (EntryKind::Background, Some(_)) => {
                        return Err(Error::CorruptRepository("background entry with class_id".into()))
                    }
                };
                Ok(Prototype {
                    vector: e.vector,
                    kind,
                    scale_id: e.scale_id,
                    support_count: e.support_count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let repo = Self::from_entries(
            doc.classes,
            doc.scales,
            RepositoryMetadata {
                seed: doc.seed,
                shots: doc.shots,
            },
            prototypes,
        )
        .map_err(|e| match e {
            Error::Invalid { reason, .. } => Error::CorruptRepository(reason),
            other => other,
        })?;
        if repo.dim != doc.dim {
            return Err(Error::CorruptRepository(format!(
                "declared dim {} but vectors have {}",
                doc.dim, repo.dim
            )));
        }
        repo.check_complete()?;
        Ok(repo)
    }
}

impl Trainable for PrototypeRepository {
    fn parameter_count(&self) -> ParameterCount {
        ParameterCount::frozen(self.entries.values().map(|p| p.vector.len()).sum())
    }
}

/// 17 significant digits: enough to round-trip any f64.
fn format_exact(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_repository(repo: &PrototypeRepository, path: &Path) -> Result<()> {
    let text = repo.to_json()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_repository(path: &Path) -> Result<PrototypeRepository> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PrototypeRepository::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EntryKind {
    Foreground,
    Background,
}

#[derive(Serialize)]
struct EntryOut {
    kind: EntryKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_id: Option<usize>,
    scale_id: usize,
    support_count: usize,
    vector: Vec<Box<RawValue>>,
}

#[derive(Serialize)]
struct RepositoryOut<'a> {
    version: u32,
    classes: &'a [String],
    scales: usize,
    dim: usize,
    seed: u64,
    shots: usize,
    entries: Vec<EntryOut>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryIn {
    kind: EntryKind,
    #[serde(default)]
    class_id: Option<usize>,
    scale_id: usize,
    support_count: usize,
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct RepositoryIn {
    #[allow(dead_code)]
    version: u32,
    classes: Vec<String>,
    scales: usize,
    dim: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    shots: usize,
    entries: Vec<EntryIn>,
}

/// Pools every support scene into one repository.
///
/// Cells are pooled, not per-image means: each scene contributes its
/// per-region sums, the sums are added in scene order, and each mean is
/// formed once at the end.
pub fn accumulate_from_support(scenes: &[Scene], metadata: RepositoryMetadata) -> Result<PrototypeRepository> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::EmptySupportRegion("empty support set".into()))?;
    let classes = first.classes().to_vec();
    let n_scales = first.n_scales();
    let dim = first.dim();
    for (i, s) in scenes.iter().enumerate() {
        if s.classes() != classes.as_slice() {
            return Err(Error::MalformedScene(format!(
                "support scene {i} has a different class vocabulary"
            )));
        }
        if s.n_scales() != n_scales || s.dim() != dim {
            return Err(Error::MalformedScene(format!(
                "support scene {i} has {} scales of dim {}, expected {n_scales} of dim {dim}",
                s.n_scales(),
                s.dim()
            )));
        }
    }

    let mut prototypes = Vec::new();
    for scale in 0..n_scales {
        let mut fg: Vec<RegionSum> = vec![RegionSum::new(dim); classes.len()];
        let mut bg = RegionSum::new(dim);
        for scene in scenes {
            let map = &scene.maps()[scale];
            for (c, total) in fg.iter_mut().enumerate() {
                let mask = region_mask_from_boxes(map.dims(), scene.boxes(), MaskMode::ForegroundOfClass(c))?;
                total.merge(&masked_sum(map, &mask)?);
            }
            let mask = region_mask_from_boxes(map.dims(), scene.boxes(), MaskMode::Background)?;
            bg.merge(&masked_sum(map, &mask)?);
        }
        for (c, total) in fg.iter().enumerate() {
            if total.count == 0 {
                return Err(Error::EmptySupportRegion(format!(
                    "class `{}` at scale {scale}",
                    classes[c]
                )));
            }
            prototypes.push(Prototype {
                vector: total.mean(),
                kind: PrototypeKind::Foreground(c),
                scale_id: scale,
                support_count: total.count,
            });
        }
        if bg.count == 0 {
            return Err(Error::EmptyBackground);
        }
        prototypes.push(Prototype {
            vector: bg.mean(),
            kind: PrototypeKind::Background,
            scale_id: scale,
            support_count: bg.count,
        });
    }
    PrototypeRepository::from_entries(classes, n_scales, metadata, prototypes)
}
