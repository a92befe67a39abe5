//! Foreground/background prototype refinement of dense feature maps,
//! attention-distance profiling, negative-text contrastive alignment and a
//! synthetic domain-shift harness.

pub mod attention;
pub mod census;
pub mod enhance;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod prototypes;
pub mod toyenc;
pub mod tsa;

pub use attention::{
    distance_delta, layer_profile, mean_attention_distance, parse_dump, AttentionMatrix, DistanceDelta,
    DistanceProfile,
};
pub use census::{ParameterCensus, ParameterCount, Trainable};
pub use enhance::{EnhancementConfig, Enhancer};
pub use error::{Error, Result};
pub use geometry::{BBox, Domain, FeatureMap, GridDims, RegionMask, Scene};
pub use linalg::Matrix;
pub use prototypes::{accumulate_from_support, PrototypeRepository};
pub use toyenc::{EpisodeSpec, ShiftSpec, SuiteConfig, ToyEncoder};
pub use tsa::{AlignmentState, TextBank};
