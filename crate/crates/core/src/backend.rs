//! Producers of embeddings.
//!
//! Every backend is immutable once constructed and may be shared across
//! threads; callers are free to issue encode requests in parallel.

use std::collections::HashMap;

use crate::embedding::{Embedding, ModelSpec};
use crate::error::{Error, Result};
use crate::preprocess::{stats_encode, StandardizedImage};
use crate::store::ExemplarRecord;
use crate::tokenizer::TokenSequence;

#[cfg(feature = "onnx")]
mod onnx;
#[cfg(feature = "onnx")]
pub use onnx::{OnnxTextEncoder, OnnxVisionEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    OnnxVision,
    OnnxText,
    MockStats,
    Store,
}

pub trait ImageEncoder: Send + Sync {
    fn spec(&self) -> &ModelSpec;
    fn kind(&self) -> BackendKind;
    fn encode_image(&self, img: &StandardizedImage) -> Result<Embedding>;
}

pub trait TextEncoder: Send + Sync {
    fn spec(&self) -> &ModelSpec;
    fn kind(&self) -> BackendKind;
    fn encode_text(&self, tokens: &TokenSequence) -> Result<Embedding>;
}

pub(crate) fn check_input_size(spec: &ModelSpec, img: &StandardizedImage) -> Result<()> {
    if img.size() != spec.input_size {
        return Err(Error::Geometry(format!(
            "{} expects {}x{} input, got {}x{}",
            spec.model_id,
            spec.input_size,
            spec.input_size,
            img.size(),
            img.size()
        )));
    }
    Ok(())
}

pub(crate) fn check_output(spec: &ModelSpec, e: Embedding) -> Result<Embedding> {
    if e.dim() != spec.dim {
        return Err(Error::Backend(format!(
            "{} produced a {}-vector, expected {}",
            spec.model_id,
            e.dim(),
            spec.dim
        )));
    }
    Ok(e)
}

/// Summary-statistics encoder; needs no model weights.
#[derive(Debug, Clone)]
pub struct MockStatsEncoder {
    spec: ModelSpec,
}

impl MockStatsEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(MockStatsEncoder {
            spec: ModelSpec::mock_stats(dim)?,
        })
    }
}

impl ImageEncoder for MockStatsEncoder {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn kind(&self) -> BackendKind {
        BackendKind::MockStats
    }

    fn encode_image(&self, img: &StandardizedImage) -> Result<Embedding> {
        check_input_size(&self.spec, img)?;
        check_output(&self.spec, stats_encode(img.image(), self.spec.dim)?)
    }
}

/// Replays precomputed embeddings, keyed by image id or prompt text.
#[derive(Debug, Clone)]
pub struct StoreBackend {
    spec: ModelSpec,
    by_key: HashMap<String, Embedding>,
}

impl StoreBackend {
    /// Image embeddings keyed by record id.
    pub fn images(records: &[ExemplarRecord]) -> Result<Self> {
        Self::build(records, |r| r.id.clone())
    }

    /// Text embeddings keyed by the prompt stored in each record's caption.
    pub fn prompts(records: &[ExemplarRecord]) -> Result<Self> {
        Self::build(records, |r| r.caption.clone())
    }

    fn build(records: &[ExemplarRecord], key: impl Fn(&ExemplarRecord) -> String) -> Result<Self> {
        let first = records
            .first()
            .ok_or(Error::EmptyInput("embedding store has no records"))?;
        let model_id = first.embedding.model_id().to_string();
        let dim = first.embedding.dim();
        let spec = ModelSpec::registered(&model_id).unwrap_or(ModelSpec {
            model_id: model_id.clone(),
            input_size: 1,
            patch_size: 1,
            dim,
            channel_norm: crate::embedding::ChannelNorm::CLIP,
        });
        let mut by_key = HashMap::with_capacity(records.len());
        for r in records {
            if r.embedding.model_id() != model_id || r.embedding.dim() != dim {
                return Err(Error::Store(format!(
                    "record {:?} does not match {model_id} / dim {dim}",
                    r.id
                )));
            }
            by_key.insert(key(r), r.embedding.clone());
        }
        Ok(StoreBackend { spec, by_key })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn get(&self, key: &str) -> Result<Embedding> {
        self.by_key
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Backend(format!("no stored embedding for {key:?}")))
    }
}

impl ImageEncoder for StoreBackend {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Store
    }

    fn encode_image(&self, img: &StandardizedImage) -> Result<Embedding> {
        self.get(img.source_id())
    }
}
