//! Alignment of visual background features with negative-descriptor text.

pub mod align;
pub mod banks;
pub mod text;

pub use align::{
    alignment_gradients, alignment_similarity, check_gradients, contrastive_loss, optimize_alignment,
    random_matrix, relative_error, select_text_batch, total_loss, AlignmentGradients, AlignmentState,
    GradientCheck, DEFAULT_LAMBDA_BG, DEFAULT_TAU_CTR,
};
pub use banks::{builtin_bank, builtin_domains, synthetic_bank, DEFAULT_BANK_SIZE, SYNTHETIC_CLASSES};
pub use text::{
    embed_text, embed_texts, generate_negative_descriptors, select_background_texts, HashNgramEmbedder,
    TextBank, TextEmbedder,
};
