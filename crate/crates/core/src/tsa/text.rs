//! Negative-descriptor text banks and deterministic text embeddings.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::census::{ParameterCount, Trainable};
use crate::enhance::{cosine, softmax_with_temperature};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `"not c₁, not c₂, …"` followed by one `"not cᵢ"` per class, in vocabulary order.
pub fn generate_negative_descriptors(vocabulary: &[String]) -> Result<Vec<String>> {
    if vocabulary.is_empty() {
        return Err(Error::invalid("vocabulary", "needs at least one class"));
    }
    let singles: Vec<String> = vocabulary.iter().map(|c| format!("not {c}")).collect();
    let mut out = Vec::with_capacity(vocabulary.len() + 1);
    out.push(singles.join(", "));
    out.extend(singles);
    Ok(out)
}

/// Background descriptions for one dataset family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextBank {
    pub domain: String,
    pub classes: Vec<String>,
    pub entries: Vec<String>,
}

impl TextBank {
    pub fn new(domain: impl Into<String>, classes: Vec<String>, entries: Vec<String>) -> Result<Self> {
        let bank = Self {
            domain: domain.into(),
            classes,
            entries,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invalid("text bank", "no entries"));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.trim().is_empty() {
                return Err(Error::invalid("text bank", "blank entry"));
            }
            if !seen.insert(e.as_str()) {
                return Err(Error::invalid("text bank", format!("duplicate entry `{e}`")));
            }
        }
        Ok(())
    }

    /// Negative descriptors for this bank's vocabulary.
    pub fn negative_descriptors(&self) -> Result<Vec<String>> {
        generate_negative_descriptors(&self.classes)
    }

    /// Bank entries followed by any generated negative descriptors not already present.
    pub fn texts_with_negatives(&self) -> Result<Vec<String>> {
        let mut out = self.entries.clone();
        let seen: HashSet<&str> = self.entries.iter().map(String::as_str).collect();
        for d in self.negative_descriptors()? {
            if !seen.contains(d.as_str()) {
                out.push(d);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "text bank".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bank: TextBank = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "text bank".into(),
            source,
        })?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Deterministic string → vector map. The same input must always produce
/// bit-identical output.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing of word unigrams and character trigrams, seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashNgramEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashNgramEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche so low bits are usable as a bucket index
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

impl Trainable for HashNgramEmbedder {
    fn parameter_count(&self) -> ParameterCount {
        ParameterCount::NONE
    }
}

impl HashNgramEmbedder {
    fn add_feature(&self, v: &mut [f64], key: &[u8], weight: f64) {
        let h = fnv1a(self.seed, key);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign * weight;
    }
}

impl TextEmbedder for HashNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric() && c != '-').filter(|w| !w.is_empty()) {
            let mut key = b"w:".to_vec();
            key.extend_from_slice(word.as_bytes());
            self.add_feature(&mut v, &key, 1.0);
            let padded: Vec<char> = format!("#{word}#").chars().collect();
            for tri in padded.windows(3) {
                let s: String = tri.iter().collect();
                let mut key = b"c:".to_vec();
                key.extend_from_slice(s.as_bytes());
                self.add_feature(&mut v, &key, 0.5);
            }
        }
        v
    }
}

/// Embeds every text and normalizes each vector to unit length.
pub fn embed_texts(texts: &[String], embedder: &dyn TextEmbedder) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(texts.len());
    for t in texts {
        let mut v = embedder.embed(t);
        if v.len() != embedder.dim() {
            return Err(Error::DimensionMismatch {
                context: "embedder output",
                expected: embedder.dim(),
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of `{t}`")));
        }
        let n = crate::enhance::norm(&v);
        if n == 0.0 {
            return Err(Error::invalid("embedding", format!("`{t}` maps to the zero vector")));
        }
        v.iter_mut().for_each(|x| *x /= n);
        rows.push(v);
    }
    Matrix::from_rows(&rows)
}

/// Unit-norm embeddings of a bank's entries, one row per entry.
pub fn embed_text(bank: &TextBank, embedder: &dyn TextEmbedder) -> Result<Matrix> {
    bank.validate()?;
    embed_texts(&bank.entries, embedder)
}

/// Softmax over cosine similarities between one feature and each text row,
/// sharpened by `1 / temperature`.
pub fn select_background_texts(feature: &[f64], texts: &Matrix, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", format!("must be > 0, got {temperature}")));
    }
    if texts.cols() != feature.len() {
        return Err(Error::DimensionMismatch {
            context: "text selection feature dim",
            expected: texts.cols(),
            got: feature.len(),
        });
    }
    if texts.rows() == 0 {
        return Err(Error::invalid("text selection", "no texts"));
    }
    let sims: Vec<f64> = (0..texts.rows()).map(|r| cosine(feature, texts.row(r), 0.0)).collect();
    Ok(softmax_with_temperature(&sims, temperature))
}
