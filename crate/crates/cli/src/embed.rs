use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use inspect_core::backend::{ImageEncoder, MockStatsEncoder};
use inspect_core::preprocess::{load_image, standardize};
use inspect_core::store;
use inspect_core::{Error, ExemplarRecord};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{FileConfig, ModelArgs};
use crate::error::CliError;

const DEFAULT_MOCK_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// Summary-statistics encoder, no model weights needed.
    MockStats,
    /// ONNX vision tower from the configuration.
    Onnx,
}

#[derive(Args)]
pub struct EmbedArgs {
    /// Directory of PNG/JPEG images.
    #[arg(long)]
    input: PathBuf,
    /// CSV with header id,label,sublabel,caption [default: <input>/labels.csv].
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Embedding store to write.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::MockStats)]
    backend: Backend,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub sublabel: String,
    #[serde(default)]
    pub caption: String,
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read labels {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let row: LabelRow = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: format!("{}: {e}", path.display()),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("cannot list {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn image_encoder(
    backend: Backend,
    cfg: &FileConfig,
) -> Result<Box<dyn ImageEncoder>, CliError> {
    match backend {
        Backend::MockStats => {
            let dim = cfg.dim.unwrap_or(DEFAULT_MOCK_DIM);
            Ok(Box::new(MockStatsEncoder::new(dim).map_err(CliError::usage)?))
        }
        Backend::Onnx => onnx_vision(cfg),
    }
}

#[cfg(feature = "onnx")]
fn onnx_vision(cfg: &FileConfig) -> Result<Box<dyn ImageEncoder>, CliError> {
    let path = cfg.vision_onnx_path.as_ref().ok_or_else(|| {
        CliError::usage("the onnx backend needs vision_onnx_path in the config or --vision-onnx")
    })?;
    let spec = cfg.model_spec(None, None)?;
    Ok(Box::new(inspect_core::backend::OnnxVisionEncoder::load(path, spec)?))
}

#[cfg(not(feature = "onnx"))]
fn onnx_vision(_: &FileConfig) -> Result<Box<dyn ImageEncoder>, CliError> {
    Err(Error::Backend("this build has no ONNX support; rebuild with --features onnx".into()).into())
}

/// Embeds every image in `dir`; returns records in file-name order plus
/// the images that failed, with reasons.
pub fn embed_dir(
    dir: &Path,
    labels: &HashMap<String, LabelRow>,
    encoder: &dyn ImageEncoder,
) -> Result<(Vec<ExemplarRecord>, Vec<(String, String)>), CliError> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(CliError::usage(format!(
            "no PNG or JPEG images in {}",
            dir.display()
        )));
    }
    let total = paths.len();
    let done = AtomicUsize::new(0);
    let spec = encoder.spec();
    let outcomes: Vec<(String, Result<ExemplarRecord, String>)> = paths
        .par_iter()
        .map(|path| {
            let id = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let outcome = (|| {
                let row = labels
                    .get(&id)
                    .ok_or_else(|| "no entry in the labels file".to_string())?;
                let raw = load_image(path).map_err(|e| e.to_string())?;
                let img = standardize(&raw, spec, &id).map_err(|e| e.to_string())?;
                let e = encoder.encode_image(&img).map_err(|e| e.to_string())?;
                let mut record = ExemplarRecord::new(id.clone(), row.label.clone(), e)
                    .map_err(|e| e.to_string())?
                    .with_caption(row.caption.clone());
                if !row.sublabel.is_empty() {
                    record = record.with_sublabel(row.sublabel.clone());
                }
                Ok(record)
            })();
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n % 100 == 0 || n == total {
                log::info!("embedded {n}/{total}");
            }
            (id, outcome)
        })
        .collect();

    let mut records = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(reason) => {
                log::warn!("{id}: {reason}");
                failures.push((id, reason));
            }
        }
    }
    Ok((records, failures))
}

pub fn run(args: EmbedArgs) -> Result<(), CliError> {
    let cfg = args.model.resolve()?;
    let labels_path = args
        .labels
        .clone()
        .unwrap_or_else(|| args.input.join("labels.csv"));
    if !args.input.is_dir() {
        return Err(CliError::usage(format!(
            "{} is not a directory",
            args.input.display()
        )));
    }
    if !labels_path.is_file() {
        return Err(CliError::usage(format!(
            "labels file {} not found",
            labels_path.display()
        )));
    }
    let labels: HashMap<String, LabelRow> = read_labels(&labels_path)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    let encoder = image_encoder(args.backend, &cfg)?;
    let (records, failures) = embed_dir(&args.input, &labels, encoder.as_ref())?;
    if records.is_empty() {
        return Err(anyhow!("none of the {} images could be embedded", failures.len()).into());
    }
    store::save(&records, &args.output)?;
    log::info!(
        "wrote {} records ({}, dim {}) to {}; {} failed",
        records.len(),
        encoder.spec().model_id,
        encoder.spec().dim,
        args.output.display(),
        failures.len()
    );
    Ok(())
}
