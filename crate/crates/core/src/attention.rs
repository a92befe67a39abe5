//! Attention distance: the attention-weighted mean spatial distance between
//! a token and every token it attends to, averaged per layer.
//!
//! `d̄ = (1/N) Σ_i Σ_j A_ij ‖p_i − p_j‖` with Euclidean distance in grid units.
//! Multi-head layers are reduced by averaging the per-head `d̄`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Row-stochastic token attention for one layer, one or more heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    label: String,
    n_tokens: usize,
    heads: usize,
    positions: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl AttentionMatrix {
    /// `weights` is `heads × n × n`, row-major. Rows must sum to 1 within
    /// [`ROW_SUM_TOLERANCE`]; they are rejected, never renormalized.
    pub fn new(
        label: impl Into<String>,
        positions: Vec<[f64; 2]>,
        heads: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let label = label.into();
        let n = positions.len();
        let malformed = |row: usize, reason: String| Error::MalformedAttention {
            label: label.clone(),
            row,
            reason,
        };
        if n == 0 {
            return Err(malformed(0, "no tokens".into()));
        }
        if heads == 0 {
            return Err(malformed(0, "zero heads".into()));
        }
        if weights.len() != heads * n * n {
            return Err(malformed(
                0,
                format!("expected {} weights for {heads} head(s) of {n} tokens, got {}", heads * n * n, weights.len()),
            ));
        }
        if let Some(i) = positions.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(malformed(i, "non-finite position".into()));
        }
        for (r, row) in weights.chunks_exact(n).enumerate() {
            let token = r % n;
            if let Some(j) = row.iter().position(|w| !w.is_finite() || *w < 0.0) {
                return Err(malformed(token, format!("weight at column {j} is {}", row[j])));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(malformed(token, format!("row sums to {sum}")));
            }
        }
        Ok(Self {
            label,
            n_tokens: n,
            heads,
            positions,
            weights,
        })
    }

    /// Token positions `(y, x)` of a `height × width` grid, row-major.
    pub fn grid_positions(height: usize, width: usize) -> Vec<[f64; 2]> {
        (0..height)
            .flat_map(|y| (0..width).map(move |x| [y as f64, x as f64]))
            .collect()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, head: usize, i: usize) -> &[f64] {
        let n = self.n_tokens;
        &self.weights[(head * n + i) * n..(head * n + i + 1) * n]
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        let (dy, dx) = (a[0] - b[0], a[1] - b[1]);
        (dy * dy + dx * dx).sqrt()
    }

    fn distance_table(&self) -> Vec<f64> {
        let n = self.n_tokens;
        let mut table = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                table[i * n + j] = self.distance(i, j);
            }
        }
        table
    }

    /// `Σ_k A_ik ‖p_i − p_k‖` for one token, averaged over heads.
    pub fn token_attention_distance(&self, i: usize) -> f64 {
        assert!(i < self.n_tokens, "token {i} out of range");
        let per_head: f64 = (0..self.heads)
            .map(|h| {
                self.row(h, i)
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * self.distance(i, j))
                    .sum::<f64>()
            })
            .sum();
        per_head / self.heads as f64
    }

    /// Per-token distances (head-averaged), computed against a shared
    /// distance table with rows evaluated in parallel.
    pub fn token_distances(&self) -> Vec<f64> {
        let n = self.n_tokens;
        let table = self.distance_table();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let r = &table[i * n..(i + 1) * n];
                let total: f64 = (0..self.heads)
                    .map(|h| self.row(h, i).iter().zip(r).map(|(a, d)| a * d).sum::<f64>())
                    .sum();
                total / self.heads as f64
            })
            .collect()
    }

    /// Per-head `d̄`, each the token mean summed in index order.
    pub fn head_mean_distances(&self) -> Vec<f64> {
        let n = self.n_tokens;
        let table = self.distance_table();
        (0..self.heads)
            .map(|h| {
                let rows: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let r = &table[i * n..(i + 1) * n];
                        self.row(h, i).iter().zip(r).map(|(a, d)| a * d).sum::<f64>()
                    })
                    .collect();
                rows.iter().sum::<f64>() / n as f64
            })
            .collect()
    }

    /// Layer attention distance: mean over heads of the per-head token mean.
    pub fn mean_attention_distance(&self) -> f64 {
        let per_head = self.head_mean_distances();
        per_head.iter().sum::<f64>() / per_head.len() as f64
    }

    /// Largest pairwise token distance; an upper bound on any attention distance.
    pub fn max_pairwise_distance(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n_tokens {
            for j in 0..self.n_tokens {
                best = best.max(self.distance(i, j));
            }
        }
        best
    }

    pub fn to_record(&self) -> AttentionRecord {
        AttentionRecord {
            label: self.label.clone(),
            n: self.n_tokens,
            heads: self.heads,
            positions: self.positions.clone(),
            weights: self.weights.clone(),
        }
    }
}

pub fn mean_attention_distance(attention: &AttentionMatrix) -> f64 {
    attention.mean_attention_distance()
}

pub fn token_attention_distance(attention: &AttentionMatrix, i: usize) -> f64 {
    attention.token_attention_distance(i)
}

/// One entry of an attention dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionRecord {
    pub label: String,
    pub n: usize,
    #[serde(default = "one")]
    pub heads: usize,
    pub positions: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

fn one() -> usize {
    1
}

impl AttentionRecord {
    pub fn into_matrix(self) -> Result<AttentionMatrix> {
        if self.positions.len() != self.n {
            return Err(Error::MalformedAttention {
                label: self.label,
                row: 0,
                reason: format!("`n` is {} but {} positions were given", self.n, self.positions.len()),
            });
        }
        AttentionMatrix::new(self.label, self.positions, self.heads, self.weights)
    }
}

/// Parses a JSON attention dump: an array of `{label, n, positions, weights}`.
pub fn parse_dump(text: &str) -> Result<Vec<AttentionMatrix>> {
    let records: Vec<AttentionRecord> = serde_json::from_str(text).map_err(|source| Error::Json {
        context: "attention dump".into(),
        source,
    })?;
    records.into_iter().map(AttentionRecord::into_matrix).collect()
}

pub fn dump_to_json(dump: &[AttentionMatrix]) -> Result<String> {
    let records: Vec<AttentionRecord> = dump.iter().map(AttentionMatrix::to_record).collect();
    serde_json::to_string(&records).map_err(|source| Error::Json {
        context: "attention dump".into(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistance {
    pub label: String,
    pub mean_distance: f64,
}

/// Ordered per-layer attention distances.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub layers: Vec<LayerDistance>,
    /// Optional per-token breakdown for one layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_token: Option<Vec<f64>>,
}

impl DistanceProfile {
    pub fn mean(&self) -> f64 {
        if self.layers.is_empty() {
            return 0.0;
        }
        self.layers.iter().map(|l| l.mean_distance).sum::<f64>() / self.layers.len() as f64
    }

    pub fn values(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.mean_distance).collect()
    }

    /// Element-wise mean of profiles with identical layer labels.
    pub fn average(profiles: &[DistanceProfile]) -> Result<DistanceProfile> {
        let first = profiles.first().ok_or(Error::EmptyProfile)?;
        let mut sums = vec![0.0; first.layers.len()];
        for p in profiles {
            check_labels(first, p)?;
            for (s, l) in sums.iter_mut().zip(&p.layers) {
                *s += l.mean_distance;
            }
        }
        Ok(DistanceProfile {
            layers: first
                .layers
                .iter()
                .zip(sums)
                .map(|(l, s)| LayerDistance {
                    label: l.label.clone(),
                    mean_distance: s / profiles.len() as f64,
                })
                .collect(),
            per_token: None,
        })
    }

    /// Whether the per-layer distances never decrease with depth.
    pub fn is_monotone_non_decreasing(&self) -> bool {
        self.layers.windows(2).all(|w| w[1].mean_distance >= w[0].mean_distance)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["layer", "mean_distance"]).map_err(csv_err)?;
        for l in &self.layers {
            w.write_record([l.label.clone(), l.mean_distance.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::io("csv output", std::io::Error::other(e))
}

/// Profile over layers, preserving dump order and labels.
pub fn layer_profile(dump: &[AttentionMatrix]) -> Result<DistanceProfile> {
    if dump.is_empty() {
        return Err(Error::EmptyProfile);
    }
    Ok(DistanceProfile {
        layers: dump
            .iter()
            .map(|a| LayerDistance {
                label: a.label().to_string(),
                mean_distance: a.mean_attention_distance(),
            })
            .collect(),
        per_token: None,
    })
}

fn check_labels(before: &DistanceProfile, after: &DistanceProfile) -> Result<()> {
    let n = before.layers.len().max(after.layers.len());
    for i in 0..n {
        let b = before.layers.get(i).map(|l| l.label.as_str()).unwrap_or("<missing>");
        let a = after.layers.get(i).map(|l| l.label.as_str()).unwrap_or("<missing>");
        if a != b {
            return Err(Error::ProfileMismatch {
                index: i,
                before: b.to_string(),
                after: a.to_string(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDelta {
    pub label: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// Signed per-layer change `after − before`. Negative means less dispersed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceDelta {
    pub layers: Vec<LayerDelta>,
    pub mean_delta: f64,
}

impl DistanceDelta {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["layer", "before", "after", "delta"]).map_err(csv_err)?;
        for l in &self.layers {
            w.write_record([
                l.label.clone(),
                l.before.to_string(),
                l.after.to_string(),
                l.delta.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))
    }
}

pub fn distance_delta(before: &DistanceProfile, after: &DistanceProfile) -> Result<DistanceDelta> {
    if before.layers.is_empty() {
        return Err(Error::EmptyProfile);
    }
    check_labels(before, after)?;
    let layers: Vec<LayerDelta> = before
        .layers
        .iter()
        .zip(&after.layers)
        .map(|(b, a)| LayerDelta {
            label: b.label.clone(),
            before: b.mean_distance,
            after: a.mean_distance,
            delta: a.mean_distance - b.mean_distance,
        })
        .collect();
    let mean_delta = layers.iter().map(|l| l.delta).sum::<f64>() / layers.len() as f64;
    Ok(DistanceDelta { layers, mean_delta })
}
