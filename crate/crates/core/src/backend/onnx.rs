//! ONNX encoder towers executed with tract.

use std::path::Path;

use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

use super::{check_input_size, check_output, BackendKind, ImageEncoder, TextEncoder};
use crate::embedding::{Embedding, ModelSpec};
use crate::error::{Error, Result};
use crate::preprocess::StandardizedImage;
use crate::tokenizer::{TokenSequence, CONTEXT_LENGTH};

type Plan = TypedRunnableModel<TypedModel>;

fn backend_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Backend(format!("{}: {e}", path.display()))
}

/// Picks the first output whose element count equals the embedding dim.
fn pick_output(spec: &ModelSpec, outputs: TVec<TValue>) -> Result<Embedding> {
    for out in outputs {
        let view = out
            .to_array_view::<f32>()
            .map_err(|e| Error::Backend(e.to_string()))?;
        if view.len() == spec.dim {
            let values = view.iter().map(|&v| v as f64).collect();
            return check_output(spec, Embedding::new(spec.model_id.clone(), values)?);
        }
    }
    Err(Error::Backend(format!(
        "no model output has {} elements",
        spec.dim
    )))
}

/// Vision tower taking a normalized `[1, 3, s, s]` float tensor.
pub struct OnnxVisionEncoder {
    spec: ModelSpec,
    plan: Plan,
}

impl OnnxVisionEncoder {
    pub fn load(path: impl AsRef<Path>, spec: ModelSpec) -> Result<Self> {
        let path = path.as_ref();
        spec.validate()?;
        let s = spec.input_size as usize;
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, s, s]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| backend_err(path, e))?;
        Ok(OnnxVisionEncoder {
            spec,
            plan,
        })
    }
}

impl ImageEncoder for OnnxVisionEncoder {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn kind(&self) -> BackendKind {
        BackendKind::OnnxVision
    }

    fn encode_image(&self, img: &StandardizedImage) -> Result<Embedding> {
        check_input_size(&self.spec, img)?;
        let s = self.spec.input_size as usize;
        let norm = self.spec.channel_norm;
        let data = img.to_chw(norm.mean, norm.std);
        let input = Tensor::from_shape(&[1, 3, s, s], &data)
            .map_err(|e| Error::Backend(e.to_string()))?;
        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| Error::Backend(e.to_string()))?;
        pick_output(&self.spec, outputs)
    }
}

/// Text tower taking `[1, 77]` token ids (int32 or int64) and, when the
/// graph declares a second input, an attention mask of the same shape.
pub struct OnnxTextEncoder {
    spec: ModelSpec,
    plan: Plan,
    id_type: DatumType,
    with_mask: bool,
}

impl OnnxTextEncoder {
    pub fn load(path: impl AsRef<Path>, spec: ModelSpec) -> Result<Self> {
        let path = path.as_ref();
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| backend_err(path, e))?;
        let declared = model
            .input_fact(0)
            .map_err(|e| backend_err(path, e))?
            .datum_type
            .concretize();
        let id_type = match declared {
            Some(DatumType::I32) => DatumType::I32,
            _ => DatumType::I64,
        };
        let with_mask = model.inputs.len() > 1;
        let fact = InferenceFact::dt_shape(id_type, [1, CONTEXT_LENGTH]);
        let mut model = model
            .with_input_fact(0, fact.clone())
            .map_err(|e| backend_err(path, e))?;
        if with_mask {
            model = model
                .with_input_fact(1, fact)
                .map_err(|e| backend_err(path, e))?;
        }
        let plan = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| backend_err(path, e))?;
        Ok(OnnxTextEncoder {
            spec,
            plan,
            id_type,
            with_mask,
        })
    }

    fn tensor(&self, values: impl Iterator<Item = i64>) -> Result<Tensor> {
        let v: Vec<i64> = values.collect();
        let t = match self.id_type {
            DatumType::I32 => {
                let v: Vec<i32> = v.iter().map(|&x| x as i32).collect();
                Tensor::from_shape(&[1, CONTEXT_LENGTH], &v)
            }
            _ => Tensor::from_shape(&[1, CONTEXT_LENGTH], &v),
        };
        t.map_err(|e| Error::Backend(e.to_string()))
    }
}

impl TextEncoder for OnnxTextEncoder {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn kind(&self) -> BackendKind {
        BackendKind::OnnxText
    }

    fn encode_text(&self, tokens: &TokenSequence) -> Result<Embedding> {
        let mut inputs: TVec<TValue> =
            tvec!(self.tensor(tokens.ids().iter().map(|&i| i as i64))?.into());
        if self.with_mask {
            let len = tokens.attention_length();
            inputs.push(
                self.tensor((0..CONTEXT_LENGTH).map(|i| i64::from(i < len)))?
                    .into(),
            );
        }
        let outputs = self
            .plan
            .run(inputs)
            .map_err(|e| Error::Backend(e.to_string()))?;
        pick_output(&self.spec, outputs)
    }
}
