//! Model configuration: a TOML file (path from `--config` or
//! `INSPECT_CONFIG`) with every key overridable by a flag.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use inspect_core::embedding::ChannelNorm;
use inspect_core::ModelSpec;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model_id: Option<String>,
    pub vision_onnx_path: Option<PathBuf>,
    pub text_onnx_path: Option<PathBuf>,
    pub input_size: Option<u32>,
    pub patch_size: Option<u32>,
    pub dim: Option<usize>,
    pub channel_mean: Option<[f64; 3]>,
    pub channel_std: Option<[f64; 3]>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        // Relative model paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.vision_onnx_path, &mut cfg.text_onnx_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// TOML config file.
    #[arg(long, env = "INSPECT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Encoder identifier, e.g. ViT-B/32.
    #[arg(long)]
    pub model_id: Option<String>,
    /// ONNX vision tower.
    #[arg(long)]
    pub vision_onnx: Option<PathBuf>,
    /// ONNX text tower.
    #[arg(long)]
    pub text_onnx: Option<PathBuf>,
    #[arg(long)]
    pub input_size: Option<u32>,
    #[arg(long)]
    pub patch_size: Option<u32>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Per-channel mean, as r,g,b.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub channel_mean: Option<Vec<f64>>,
    /// Per-channel standard deviation, as r,g,b.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub channel_std: Option<Vec<f64>>,
}

fn triple(v: Option<Vec<f64>>) -> Option<[f64; 3]> {
    v.and_then(|v| v.try_into().ok())
}

impl ModelArgs {
    /// Merges flags over the config file.
    pub fn resolve(&self) -> Result<FileConfig, CliError> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let a = self.clone();
        Ok(FileConfig {
            model_id: a.model_id.or(file.model_id),
            vision_onnx_path: a.vision_onnx.or(file.vision_onnx_path),
            text_onnx_path: a.text_onnx.or(file.text_onnx_path),
            input_size: a.input_size.or(file.input_size),
            patch_size: a.patch_size.or(file.patch_size),
            dim: a.dim.or(file.dim),
            channel_mean: triple(a.channel_mean).or(file.channel_mean),
            channel_std: triple(a.channel_std).or(file.channel_std),
        })
    }
}

impl FileConfig {
    /// Encoder geometry: registry entries fill in whatever is not set
    /// explicitly; `fallback` covers unregistered ids.
    pub fn model_spec(
        &self,
        default_id: Option<&str>,
        fallback: Option<(u32, u32, usize)>,
    ) -> Result<ModelSpec, CliError> {
        let id = self
            .model_id
            .as_deref()
            .or(default_id)
            .ok_or_else(|| CliError::usage("no model_id configured (use --model-id)"))?;
        let reg = ModelSpec::registered(id)
            .map(|s| (s.input_size, s.patch_size, s.dim))
            .or(fallback);
        let missing = |key: &str| {
            CliError::usage(format!("model {id:?} is not registered; set {key}"))
        };
        let spec = ModelSpec {
            model_id: id.to_string(),
            input_size: self
                .input_size
                .or(reg.map(|r| r.0))
                .ok_or_else(|| missing("input_size"))?,
            patch_size: self
                .patch_size
                .or(reg.map(|r| r.1))
                .ok_or_else(|| missing("patch_size"))?,
            dim: self.dim.or(reg.map(|r| r.2)).ok_or_else(|| missing("dim"))?,
            channel_norm: ChannelNorm {
                mean: self.channel_mean.unwrap_or(ChannelNorm::CLIP.mean),
                std: self.channel_std.unwrap_or(ChannelNorm::CLIP.std),
            },
        };
        spec.validate().map_err(CliError::usage)?;
        Ok(spec)
    }
}
