//! Feature maps, boxes, region masks and annotated scenes.
//!
//! Coordinates are feature-grid units: cell `(y, x)` spans
//! `[x, x + 1) × [y, y + 1)` and belongs to a box when its center
//! `(x + 0.5, y + 0.5)` falls inside the box's half-open extent.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `height × width × dim` grid of feature vectors at one scale,
/// stored row-major by `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    scale_id: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        scale_id: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::invalid(
                "feature map",
                format!("dimensions must be positive, got {height}x{width}x{dim}"),
            ));
        }
        let expected = height * width * dim;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "feature map data",
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map value at flat index {i}")));
        }
        Ok(Self {
            height,
            width,
            dim,
            scale_id,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, dim: usize, scale_id: usize) -> Result<Self> {
        Self::new(height, width, dim, scale_id, vec![0.0; height * width * dim])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale_id(&self) -> usize {
        self.scale_id
    }

    pub fn n_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> GridDims {
        GridDims::new(self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Feature vector of the cell with flat index `y * width + x`.
    pub fn cell(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        self.cell(y * self.width + x)
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Copy with every value multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        dim: usize,
        scale_id: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * dim);
        Self {
            height,
            width,
            dim,
            scale_id,
            data,
        }
    }
}

/// Grid dimensions `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

impl GridDims {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn n_cells(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Axis-aligned box in feature-grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class_id: usize,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, class_id: usize) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            class_id,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::invalid(
                "box",
                format!(
                    "need x_min < x_max and y_min < y_max, got ({}, {}, {}, {})",
                    self.x_min, self.y_min, self.x_max, self.y_max
                ),
            ));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn intersects_grid(&self, dims: GridDims) -> bool {
        self.x_max > 0.0
            && self.y_max > 0.0
            && self.x_min < dims.width as f64
            && self.y_min < dims.height as f64
    }
}

/// Intersection over union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Binary per-cell mask over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    dims: GridDims,
    flags: Vec<bool>,
}

impl RegionMask {
    pub fn new(dims: GridDims, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != dims.n_cells() {
            return Err(Error::DimensionMismatch {
                context: "region mask",
                expected: dims.n_cells(),
                got: flags.len(),
            });
        }
        Ok(Self { dims, flags })
    }

    pub fn empty(dims: GridDims) -> Self {
        Self {
            dims,
            flags: vec![false; dims.n_cells()],
        }
    }

    pub fn full(dims: GridDims) -> Self {
        Self {
            dims,
            flags: vec![true; dims.n_cells()],
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn get(&self, index: usize) -> bool {
        self.flags[index]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.flags[index] = value;
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.dims == other.dims && self.flags.iter().zip(&other.flags).all(|(&a, &b)| !a || b)
    }

    /// Indices of set cells, in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
    }
}

/// Which cells a mask built from boxes should select.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Cells inside any box of the given class.
    ForegroundOfClass(usize),
    /// Cells inside no box at all.
    Background,
}

/// Rasterizes boxes onto the grid by cell-center membership.
///
/// A box lying entirely outside the grid makes the annotation malformed.
pub fn region_mask_from_boxes(dims: GridDims, boxes: &[BBox], mode: MaskMode) -> Result<RegionMask> {
    if dims.height == 0 || dims.width == 0 {
        return Err(Error::invalid("grid", format!("dimensions must be positive, got {dims}")));
    }
    for b in boxes {
        b.validate()?;
        if !b.intersects_grid(dims) {
            return Err(Error::MalformedScene(format!(
                "box ({}, {}, {}, {}) lies outside the {dims} grid",
                b.x_min, b.y_min, b.x_max, b.y_max
            )));
        }
    }
    let mut flags = Vec::with_capacity(dims.n_cells());
    for y in 0..dims.height {
        let cy = y as f64 + 0.5;
        for x in 0..dims.width {
            let cx = x as f64 + 0.5;
            let flag = match mode {
                MaskMode::ForegroundOfClass(c) => boxes
                    .iter()
                    .any(|b| b.class_id == c && b.contains_point(cx, cy)),
                MaskMode::Background => !boxes.iter().any(|b| b.contains_point(cx, cy)),
            };
            flags.push(flag);
        }
    }
    Ok(RegionMask { dims, flags })
}

/// Cells claimed by foreground masks of two or more distinct classes.
pub fn multi_class_cells(dims: GridDims, boxes: &[BBox]) -> Result<Vec<usize>> {
    let mut classes: Vec<usize> = boxes.iter().map(|b| b.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut hits = vec![0usize; dims.n_cells()];
    for c in classes {
        let mask = region_mask_from_boxes(dims, boxes, MaskMode::ForegroundOfClass(c))?;
        for i in mask.indices() {
            hits[i] += 1;
        }
    }
    Ok(hits
        .iter()
        .enumerate()
        .filter_map(|(i, &h)| (h > 1).then_some(i))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => f.write_str("source"),
            Domain::Target => f.write_str("target"),
        }
    }
}

/// Annotated synthetic image analogue: one feature map per scale plus boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    maps: Vec<FeatureMap>,
    boxes: Vec<BBox>,
    classes: Vec<String>,
    domain: Domain,
    seed: u64,
}

impl Scene {
    pub fn new(
        maps: Vec<FeatureMap>,
        boxes: Vec<BBox>,
        classes: Vec<String>,
        domain: Domain,
        seed: u64,
    ) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::MalformedScene("scene has no feature maps".into()))?;
        let dims = first.dims();
        let dim = first.dim();
        for (s, m) in maps.iter().enumerate() {
            if m.dims() != dims || m.dim() != dim {
                return Err(Error::MalformedScene(format!(
                    "scale {s} has shape {}x{} instead of {dims}x{dim}",
                    m.dims(),
                    m.dim()
                )));
            }
            if m.scale_id() != s {
                return Err(Error::MalformedScene(format!(
                    "scale {s} carries scale_id {}",
                    m.scale_id()
                )));
            }
        }
        for b in &boxes {
            b.validate()?;
            if b.class_id >= classes.len() {
                return Err(Error::MalformedScene(format!(
                    "box class_id {} is outside the {}-class vocabulary",
                    b.class_id,
                    classes.len()
                )));
            }
            if !b.intersects_grid(dims) {
                return Err(Error::MalformedScene(format!(
                    "box ({}, {}, {}, {}) lies outside the {dims} grid",
                    b.x_min, b.y_min, b.x_max, b.y_max
                )));
            }
        }
        Ok(Self {
            maps,
            boxes,
            classes,
            domain,
            seed,
        })
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn map(&self, scale: usize) -> Option<&FeatureMap> {
        self.maps.get(scale)
    }

    pub fn n_scales(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> GridDims {
        self.maps[0].dims()
    }

    pub fn dim(&self) -> usize {
        self.maps[0].dim()
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same annotations with replacement feature maps.
    pub fn with_maps(&self, maps: Vec<FeatureMap>) -> Result<Self> {
        Scene::new(
            maps,
            self.boxes.clone(),
            self.classes.clone(),
            self.domain,
            self.seed,
        )
    }

    /// Per-cell ground-truth label: `Some(class)` inside a box, `None` on background.
    /// Cells covered by several classes take the lowest class id.
    pub fn cell_labels(&self) -> Result<Vec<Option<usize>>> {
        let dims = self.dims();
        let mut labels = vec![None; dims.n_cells()];
        for c in (0..self.classes.len()).rev() {
            let mask = region_mask_from_boxes(dims, &self.boxes, MaskMode::ForegroundOfClass(c))?;
            for i in mask.indices() {
                labels[i] = Some(c);
            }
        }
        Ok(labels)
    }

    pub fn to_document(&self) -> SceneDocument {
        let first = &self.maps[0];
        SceneDocument {
            height: first.height(),
            width: first.width(),
            dim: first.dim(),
            scales: self.maps.len(),
            data: self.maps.iter().flat_map(|m| m.data().iter().copied()).collect(),
            boxes: self.boxes.clone(),
            domain: self.domain,
            seed: self.seed,
            classes: self.classes.clone(),
            enhanced: false,
            enhancement_config: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_document().to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SceneDocument = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "scene document".into(),
            source,
        })?;
        doc.into_scene()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                context: path.display().to_string(),
                source,
            },
            other => other,
        })
    }
}

/// On-disk scene layout. `data` concatenates all scales, each row-major by
/// `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub scales: usize,
    pub data: Vec<f64>,
    pub boxes: Vec<BBox>,
    pub domain: Domain,
    pub seed: u64,
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub enhanced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhancement_config: Option<serde_json::Value>,
}

impl SceneDocument {
    pub fn into_scene(self) -> Result<Scene> {
        if self.scales == 0 {
            return Err(Error::MalformedScene("`scales` must be at least 1".into()));
        }
        let per_scale = self.height * self.width * self.dim;
        if self.data.len() != per_scale * self.scales {
            return Err(Error::MalformedScene(format!(
                "`data` holds {} values, expected {} ({} scales of {}x{}x{})",
                self.data.len(),
                per_scale * self.scales,
                self.scales,
                self.height,
                self.width,
                self.dim
            )));
        }
        let maps = self
            .data
            .chunks_exact(per_scale.max(1))
            .enumerate()
            .map(|(s, chunk)| FeatureMap::new(self.height, self.width, self.dim, s, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let classes = if self.classes.is_empty() {
            let n = self.boxes.iter().map(|b| b.class_id + 1).max().unwrap_or(0);
            (0..n).map(|c| format!("class_{c}")).collect()
        } else {
            self.classes
        };
        Scene::new(maps, self.boxes, classes, self.domain, self.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|source| Error::Json {
            context: "scene document".into(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64, c: usize) -> BBox {
        BBox::new(x0, y0, x1, y1, c).unwrap()
    }

    /// Per-cell center test written independently of the rasterizer.
    fn brute_force_mask(dims: GridDims, boxes: &[BBox], class: Option<usize>) -> Vec<bool> {
        let mut out = Vec::new();
        for y in 0..dims.height {
            for x in 0..dims.width {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = |b: &BBox| cx >= b.x_min && cx < b.x_max && cy >= b.y_min && cy < b.y_max;
                out.push(match class {
                    Some(c) => boxes.iter().filter(|b| b.class_id == c).any(inside),
                    None => !boxes.iter().any(inside),
                });
            }
        }
        out
    }

    #[test]
    fn background_without_boxes_is_full() {
        let m = region_mask_from_boxes(GridDims::new(4, 4), &[], MaskMode::Background).unwrap();
        assert_eq!(m.count(), 16);
    }

    #[test]
    fn full_cover_leaves_no_background() {
        let m = region_mask_from_boxes(
            GridDims::new(4, 4),
            &[bx(0.0, 0.0, 4.0, 4.0, 0)],
            MaskMode::Background,
        )
        .unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn foreground_two_by_two() {
        let dims = GridDims::new(4, 4);
        let boxes = [bx(0.0, 0.0, 2.0, 2.0, 0)];
        let m = region_mask_from_boxes(dims, &boxes, MaskMode::ForegroundOfClass(0)).unwrap();
        assert_eq!(m.flags(), brute_force_mask(dims, &boxes, Some(0)).as_slice());
        assert_eq!(m.indices().collect::<Vec<_>>(), vec![0, 1, 4, 5]);
    }

    #[test]
    fn box_outside_grid_is_rejected() {
        let err = region_mask_from_boxes(
            GridDims::new(4, 4),
            &[bx(5.0, 5.0, 6.0, 6.0, 0)],
            MaskMode::Background,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedScene(_)));
    }

    #[test]
    fn inverted_box_is_invalid() {
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0, 0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0, 0).is_err());
    }

    #[test]
    fn overlapping_classes_share_cells() {
        let dims = GridDims::new(4, 4);
        let boxes = [bx(0.0, 0.0, 2.0, 2.0, 0), bx(1.0, 1.0, 3.0, 3.0, 1)];
        let a = region_mask_from_boxes(dims, &boxes, MaskMode::ForegroundOfClass(0)).unwrap();
        let b = region_mask_from_boxes(dims, &boxes, MaskMode::ForegroundOfClass(1)).unwrap();
        assert!(a.get(5) && b.get(5));
        assert_eq!(multi_class_cells(dims, &boxes).unwrap(), vec![5]);
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0);
        let b = bx(1.0, 1.0, 3.0, 3.0, 0);
        let c = bx(5.0, 5.0, 6.0, 6.0, 0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &c), 0.0);
        // Rasterization oracle at 1/100 resolution.
        let res = 100;
        let (mut inter, mut union) = (0u64, 0u64);
        for i in 0..3 * res {
            for j in 0..3 * res {
                let (x, y) = ((i as f64 + 0.5) / res as f64, (j as f64 + 0.5) / res as f64);
                let (ia, ib) = (a.contains_point(x, y), b.contains_point(x, y));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        let raster = inter as f64 / union as f64;
        assert!((raster - 1.0 / 7.0).abs() < 1e-12);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn scene_json_round_trip() {
        let map = FeatureMap::new(2, 2, 2, 0, vec![0.1, -0.2, 0.3, 1e-17, 5.0, 6.0, 7.5, 8.25]).unwrap();
        let scene = Scene::new(
            vec![map],
            vec![bx(0.0, 0.0, 1.0, 1.0, 1)],
            vec!["a".into(), "b".into()],
            Domain::Target,
            42,
        )
        .unwrap();
        let json = scene.to_json().unwrap();
        assert!(json.contains("\"domain\":\"target\""));
        assert_eq!(Scene::from_json(&json).unwrap(), scene);
    }

    #[test]
    fn scene_rejects_unknown_class() {
        let map = FeatureMap::zeros(2, 2, 1, 0).unwrap();
        let err = Scene::new(vec![map], vec![bx(0.0, 0.0, 1.0, 1.0, 3)], vec!["a".into()], Domain::Source, 0);
        assert!(matches!(err, Err(Error::MalformedScene(_))));
    }

    #[test]
    fn feature_map_rejects_bad_data() {
        assert!(FeatureMap::new(2, 2, 1, 0, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(1, 1, 1, 0, vec![f64::INFINITY]).is_err());
        assert!(FeatureMap::new(0, 1, 1, 0, vec![]).is_err());
    }

    fn arb_box(extent: f64) -> impl Strategy<Value = BBox> {
        (0.0..extent, 0.0..extent, 0.01..extent, 0.01..extent, 0usize..3).prop_map(
            |(x, y, w, h, c)| BBox::new(x, y, x + w, y + h, c).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(10.0), b in arb_box(10.0)) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn masks_partition_grid_without_overlap(
            raw in proptest::collection::vec((0usize..6, 0usize..6, 1usize..4, 1usize..4, 0usize..3), 0..4)
        ) {
            let dims = GridDims::new(6, 6);
            let boxes: Vec<BBox> = raw
                .iter()
                .map(|&(x, y, w, h, c)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64, c).unwrap())
                .collect();
            let overlaps = multi_class_cells(dims, &boxes).unwrap();
            let bg = region_mask_from_boxes(dims, &boxes, MaskMode::Background).unwrap();
            prop_assert_eq!(bg.flags(), &brute_force_mask(dims, &boxes, None)[..]);
            let mut cover = vec![0usize; dims.n_cells()];
            for i in bg.indices() { cover[i] += 1; }
            for c in 0..3 {
                let m = region_mask_from_boxes(dims, &boxes, MaskMode::ForegroundOfClass(c)).unwrap();
                prop_assert_eq!(m.flags(), &brute_force_mask(dims, &boxes, Some(c))[..]);
                for i in m.indices() { cover[i] += 1; }
            }
            for (i, &n) in cover.iter().enumerate() {
                if overlaps.contains(&i) {
                    prop_assert!(n >= 2);
                } else {
                    prop_assert_eq!(n, 1);
                }
            }
        }
    }
}
