//! Embedding vectors, encoder model geometry and the similarity kernels
//! every classifier in the crate is built on.
//!
//! Similarities are always computed on the raw vectors with an explicit
//! norm division; [`normalize`] is only a cache-friendly convenience.
//! All arithmetic accumulates in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length real vector produced by an encoder, tagged with the
/// identity of the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    model_id: String,
    values: Vec<f64>,
}

impl Embedding {
    /// Builds an embedding, rejecting empty or non-finite vectors and vectors
    /// whose length disagrees with the registry entry for `model_id`.
    pub fn new(model_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let model_id = model_id.into();
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!(
                "component {i} is not finite"
            )));
        }
        if let Some(spec) = ModelSpec::registered(&model_id) {
            if spec.dim != values.len() {
                return Err(Error::Dimension {
                    expected: spec.dim,
                    actual: values.len(),
                });
            }
        }
        Ok(Embedding { model_id, values })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    /// Multiplies every component by `factor`, keeping the model tag.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Embedding::new(
            self.model_id.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Keeps the first `dim` components under a new model id.
    pub fn truncated(&self, model_id: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 || dim > self.dim() {
            return Err(Error::Dimension {
                expected: dim,
                actual: self.dim(),
            });
        }
        Embedding::new(model_id, self.values[..dim].to_vec())
    }
}

/// Per-channel normalization constants applied by ONNX vision backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelNorm {
    /// Constants published with the CLIP encoder family.
    pub const CLIP: ChannelNorm = ChannelNorm {
        mean: [0.48145466, 0.4578275, 0.40821073],
        std: [0.26862954, 0.26130258, 0.27577711],
    };
}

/// Input geometry and output width of an image encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    /// Side length of the square encoder input, in pixels.
    pub input_size: u32,
    /// Side length of one transformer patch, in pixels.
    pub patch_size: u32,
    /// Embedding dimension.
    pub dim: usize,
    pub channel_norm: ChannelNorm,
}

pub const VIT_B_32: &str = "ViT-B/32";
pub const VIT_B_16: &str = "ViT-B/16";
pub const VIT_L_14: &str = "ViT-L/14";
pub const MOCK_STATS: &str = "mock-stats";

const REGISTRY: [(&str, u32, u32, usize); 3] = [
    (VIT_B_32, 224, 32, 512),
    (VIT_B_16, 224, 16, 512),
    (VIT_L_14, 336, 14, 768),
];

impl ModelSpec {
    pub fn new(
        model_id: impl Into<String>,
        input_size: u32,
        patch_size: u32,
        dim: usize,
    ) -> Result<Self> {
        let spec = ModelSpec {
            model_id: model_id.into(),
            input_size,
            patch_size,
            dim,
            channel_norm: ChannelNorm::CLIP,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Looks up one of the built-in encoder entries.
    pub fn registered(model_id: &str) -> Option<ModelSpec> {
        REGISTRY
            .iter()
            .find(|(id, ..)| *id == model_id)
            .map(|&(id, s, p, d)| ModelSpec {
                model_id: id.to_string(),
                input_size: s,
                patch_size: p,
                dim: d,
                channel_norm: ChannelNorm::CLIP,
            })
    }

    pub fn registry() -> Vec<ModelSpec> {
        REGISTRY
            .iter()
            .filter_map(|(id, ..)| ModelSpec::registered(id))
            .collect()
    }

    /// Geometry for the deterministic statistics encoder.
    pub fn mock_stats(dim: usize) -> Result<Self> {
        if dim < 8 {
            return Err(Error::Param(format!(
                "mock-stats encoder needs dim >= 8, got {dim}"
            )));
        }
        ModelSpec::new(MOCK_STATS, 224, 32, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.is_empty() {
            return Err(Error::Param("empty model id".into()));
        }
        if self.dim == 0 {
            return Err(Error::Param("embedding dim must be positive".into()));
        }
        if self.input_size == 0 || self.patch_size == 0 {
            return Err(Error::Geometry(format!(
                "input size {} and patch size {} must be positive",
                self.input_size, self.patch_size
            )));
        }
        if self.input_size % self.patch_size != 0 {
            return Err(Error::Geometry(format!(
                "input size {} not divisible by patch size {}",
                self.input_size, self.patch_size
            )));
        }
        if let Some(reg) = ModelSpec::registered(&self.model_id) {
            if reg.dim != self.dim {
                return Err(Error::Dimension {
                    expected: reg.dim,
                    actual: self.dim,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_similarity_slices(a.values(), b.values())
}

pub fn cosine_similarity_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Temperature-1 softmax with max subtraction.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax of an empty score vector"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidScore(i));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Rescales `e` to unit L2 norm.
pub fn normalize(e: &Embedding) -> Result<Embedding> {
    let norm = e.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok(Embedding {
        model_id: e.model_id.clone(),
        values: e.values.iter().map(|v| v / norm).collect(),
    })
}

/// Index of the largest value; exact ties resolve to the later position.
pub fn argmax_last(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v < values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}
