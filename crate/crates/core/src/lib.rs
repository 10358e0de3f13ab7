//! Few-shot visual inspection on top of pretrained image embeddings.
//!
//! Test images are classified by their maximum cosine similarity to small
//! labeled exemplar sets (or to text-prompt embeddings in the zero-shot
//! case). Around that core sit image standardization, encoder backends, an
//! embedding store, classification metrics, a synthetic textured-surface
//! generator and learning-curve experiments.

pub mod backend;
pub mod classifier;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod preprocess;
pub mod results;
pub mod store;
pub mod sts;
pub mod tokenizer;

pub use classifier::{
    class_score, classify_batch, classify_few_shot, classify_zero_shot, BatchPolicy,
    BinaryOutcome, ClassificationResult, ExemplarIndex, Nearest, PromptSet,
};
pub use embedding::{cosine_similarity, normalize, softmax, Embedding, ModelSpec};
pub use error::{Error, Result};
pub use metrics::{
    auc, binary_metrics, build_confusion, extract_label, macro_metrics, BinaryMetrics,
    ConfusionMatrix, LabelVocab, MacroMetrics,
};
pub use preprocess::{RawImage, StandardizedImage};
pub use store::ExemplarRecord;
