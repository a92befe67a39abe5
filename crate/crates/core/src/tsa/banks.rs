//! Built-in background text banks, one per dataset family.
//!
//! Each bank mixes direct negations, habitat/context descriptions, absence
//! phrases and contextual negations, composed from a small per-domain
//! vocabulary and truncated to [`DEFAULT_BANK_SIZE`] entries.

use std::collections::HashSet;

use super::text::TextBank;
use crate::error::{Error, Result};

pub const DEFAULT_BANK_SIZE: usize = 200;

/// Class names for the synthetic harness, in class-id order.
pub const SYNTHETIC_CLASSES: [&str; 8] = ["sofa", "dog", "fish", "boat", "bird", "car", "chair", "plane"];

struct Vocabulary {
    domain: &'static str,
    classes: &'static [&'static str],
    contexts: &'static [&'static str],
    qualifiers: &'static [&'static str],
}

const VOCABULARIES: &[Vocabulary] = &[
    Vocabulary {
        domain: "underwater",
        classes: &["sea cucumber", "sea urchin", "scallop"],
        contexts: &[
            "sandy seafloor",
            "rocky ocean floor",
            "underwater terrain",
            "marine substrate",
            "silt bed",
            "gravel patch",
            "kelp edge",
            "seabed ripple",
        ],
        qualifiers: &["murky", "clear", "turbid", "dim", "shallow", "deep"],
    },
    Vocabulary {
        domain: "fish",
        classes: &["fish"],
        contexts: &[
            "open water",
            "coral reef",
            "seagrass bed",
            "underwater cave",
            "rock crevice",
            "sandy bottom",
            "kelp forest",
            "reef slope",
            "water column",
            "algae mat",
        ],
        qualifiers: &["clear", "murky", "shallow", "deep", "sunlit", "shaded"],
    },
    Vocabulary {
        domain: "industrial",
        classes: &["crazing", "inclusion", "patches", "pitted surface", "rolled-in scale", "scratches"],
        contexts: &[
            "steel surface",
            "hot-rolled steel",
            "metal sheet",
            "strip section",
            "plate region",
            "coil surface",
        ],
        qualifiers: &["clean", "uniform", "smooth", "polished", "standard"],
    },
    Vocabulary {
        domain: "aerial",
        classes: &["airplane", "ship", "harbor", "bridge", "vehicle", "stadium", "windmill", "dam"],
        contexts: &[
            "forest",
            "grassland",
            "agricultural field",
            "bare soil",
            "desert",
            "lake",
            "river",
            "coastline",
            "mountain",
        ],
        qualifiers: &["remote", "undeveloped", "natural", "open"],
    },
    Vocabulary {
        domain: "cartoon",
        classes: &[
            "sheep", "chair", "boat", "bottle", "sofa", "cow", "car", "cat", "person", "bird", "dog", "horse",
        ],
        contexts: &[
            "cartoon sky",
            "clipart room",
            "illustrated panel",
            "cartoon stadium",
            "clipart meadow",
            "speech bubble",
        ],
        qualifiers: &["empty", "blank", "striped", "dotted"],
    },
    Vocabulary {
        domain: "arthropod",
        classes: &["spider", "beetle", "fly", "true bug", "bee", "butterfly", "dragonfly"],
        contexts: &[
            "leaf surface",
            "tree bark",
            "plant stem",
            "forest floor",
            "meadow grass",
            "soil surface",
            "flower petal",
            "moss",
        ],
        qualifiers: &["bare", "green", "undisturbed", "sunlit"],
    },
    Vocabulary {
        domain: "synthetic",
        classes: &SYNTHETIC_CLASSES,
        contexts: &[
            "noise field",
            "flat background",
            "textured backdrop",
            "empty grid region",
            "clutter patch",
            "open area",
        ],
        qualifiers: &["plain", "noisy", "uniform", "cluttered", "sparse", "dense", "faint"],
    },
];

/// Names of all built-in banks.
pub fn builtin_domains() -> Vec<&'static str> {
    VOCABULARIES.iter().map(|v| v.domain).collect()
}

fn compose(classes: &[&str], v: &Vocabulary) -> Vec<String> {
    let mut contexts: Vec<String> = v.contexts.iter().map(|c| c.to_string()).collect();
    for q in v.qualifiers {
        for c in v.contexts {
            contexts.push(format!("{q} {c}"));
        }
    }

    let mut out = Vec::new();
    out.push(classes.iter().map(|c| format!("not {c}")).collect::<Vec<_>>().join(", "));
    for c in classes {
        out.push(format!("not {c}"));
        out.push(format!("not a {c}"));
        out.push(format!("definitely not {c}"));
        out.push(format!("certainly not {c}"));
        out.push(format!("area without {c}"));
        out.push(format!("region with no {c}"));
    }
    // interleave plain contexts with their negated forms so truncation keeps a mix
    for (i, ctx) in contexts.iter().enumerate() {
        let c = classes[i % classes.len()];
        out.push(ctx.clone());
        out.push(format!("{ctx} background"));
        out.push(format!("{ctx} without {c}"));
        out.push(format!("{ctx} with no {c} present"));
        out.push(format!("{ctx} that could hold {c} but is empty"));
    }
    out
}

fn vocabulary(domain: &str) -> Result<&'static Vocabulary> {
    VOCABULARIES
        .iter()
        .find(|v| v.domain == domain)
        .ok_or_else(|| Error::invalid("domain", format!("no built-in bank named `{domain}`")))
}

fn assemble(domain: &str, classes: &[&str], v: &Vocabulary, size: usize) -> Result<TextBank> {
    let mut seen = HashSet::new();
    let entries: Vec<String> = compose(classes, v)
        .into_iter()
        .filter(|e| seen.insert(e.clone()))
        .take(size)
        .collect();
    if entries.len() < size {
        return Err(Error::invalid(
            "bank size",
            format!("`{domain}` yields only {} distinct entries, {size} requested", entries.len()),
        ));
    }
    TextBank::new(domain, classes.iter().map(|c| c.to_string()).collect(), entries)
}

/// The built-in bank for `domain`, truncated to `size` entries.
pub fn builtin_bank(domain: &str, size: usize) -> Result<TextBank> {
    let v = vocabulary(domain)?;
    assemble(domain, v.classes, v, size)
}

/// Synthetic bank restricted to the first `n_classes` class names.
pub fn synthetic_bank(n_classes: usize, size: usize) -> Result<TextBank> {
    if n_classes == 0 || n_classes > SYNTHETIC_CLASSES.len() {
        return Err(Error::invalid(
            "n_classes",
            format!("must be in 1..={}, got {n_classes}", SYNTHETIC_CLASSES.len()),
        ));
    }
    assemble("synthetic", &SYNTHETIC_CLASSES[..n_classes], vocabulary("synthetic")?, size)
}
