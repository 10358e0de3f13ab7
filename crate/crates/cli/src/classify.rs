use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use inspect_core::backend::StoreBackend;
use inspect_core::classifier::classify_zero_shot;
use inspect_core::results::{write_results, ResultRow};
use inspect_core::store;
use inspect_core::{classify_batch, BatchPolicy, Error, ExemplarIndex, ExemplarRecord, PromptSet};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{FileConfig, ModelArgs};
use crate::error::CliError;

#[derive(Args)]
pub struct ClassifyArgs {
    /// Embedding store with the labeled learning set.
    #[arg(long)]
    exemplars: PathBuf,
    /// Embedding store with the images to classify.
    #[arg(long)]
    test: PathBuf,
    /// Results CSV [default: stdout].
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Use this value for every datetime_of_operation field.
    #[arg(long)]
    fixed_timestamp: Option<String>,
}

#[derive(Args)]
pub struct ZeroShotArgs {
    /// CSV with header class,prompt; a class may have several rows.
    #[arg(long)]
    prompts: PathBuf,
    /// Embedding store with the images to classify.
    #[arg(long)]
    test: PathBuf,
    /// Store of precomputed prompt embeddings, keyed by caption = prompt text.
    #[arg(long)]
    prompt_embeddings: Option<PathBuf>,
    /// Multiplier applied to similarities before the softmax.
    #[arg(long, default_value_t = 1.0)]
    logit_scale: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    fixed_timestamp: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
}

fn timestamp(fixed: &Option<String>) -> String {
    match fixed {
        Some(t) => t.clone(),
        None => chrono::Local::now()
            .format("%Y-%m-%dT%H:%M:%S%.6f")
            .to_string(),
    }
}

fn load_store(path: &Path) -> Result<Vec<ExemplarRecord>, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("store {} not found", path.display())));
    }
    Ok(store::load(path)?)
}

fn store_model(records: &[ExemplarRecord]) -> Option<&str> {
    records.first().map(|r| r.embedding.model_id())
}

fn check_same_model(index: &ExemplarIndex, test: &[ExemplarRecord]) -> Result<(), CliError> {
    match store_model(test) {
        Some(m) if m != index.model_id() => Err(Error::Consistency(format!(
            "test store is embedded with {m:?} but the exemplars use {:?}",
            index.model_id()
        ))
        .into()),
        _ => Ok(()),
    }
}

pub fn emit(rows: &[ResultRow], output: &Option<PathBuf>) -> Result<(), CliError> {
    match output {
        Some(path) => {
            let file = File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            write_results(rows, BufWriter::new(file))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_results(rows, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

pub fn run_few_shot(args: ClassifyArgs) -> Result<(), CliError> {
    let exemplars = load_store(&args.exemplars)?;
    let test = load_store(&args.test)?;
    let index = ExemplarIndex::from_records(exemplars)?;
    check_same_model(&index, &test)?;
    let results = classify_batch(&test, &index, BatchPolicy::FailFast)?;
    let mut rows = Vec::with_capacity(results.len());
    for (record, result) in test.iter().zip(results) {
        let outcome = result?.binary()?;
        rows.push(ResultRow::few_shot(
            &timestamp(&args.fixed_timestamp),
            index.nominal_count(),
            &record.id,
            &outcome,
        ));
    }
    emit(&rows, &args.output)?;
    log::info!("classified {} images", rows.len());
    Ok(())
}

#[derive(Deserialize)]
struct PromptRow {
    class: String,
    prompt: String,
}

fn read_prompts(path: &Path) -> Result<PromptSet, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read prompts {}: {e}", path.display())))?;
    let mut entries: Vec<(String, Vec<String>)> = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let row: PromptRow = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: format!("{}: {e}", path.display()),
        })?;
        match entries.iter_mut().find(|(c, _)| *c == row.class) {
            Some((_, prompts)) => prompts.push(row.prompt),
            None => entries.push((row.class, vec![row.prompt])),
        }
    }
    if entries.len() < 2 {
        return Err(CliError::usage(format!(
            "{} defines {} class(es); zero-shot needs at least 2",
            path.display(),
            entries.len()
        )));
    }
    PromptSet::new(entries).map_err(CliError::usage)
}

fn prompt_index(
    prompts: &PromptSet,
    args: &ZeroShotArgs,
    cfg: &FileConfig,
    test: &[ExemplarRecord],
) -> Result<ExemplarIndex, CliError> {
    if let Some(path) = &args.prompt_embeddings {
        let backend = StoreBackend::prompts(&load_store(path)?)?;
        return Ok(prompts.index_with(|p| backend.get(p))?);
    }
    let Some(path) = &cfg.text_onnx_path else {
        return Err(Error::Backend(
            "no text encoder configured; set text_onnx_path in the config file, pass \
             --text-onnx <model.onnx>, or supply precomputed --prompt-embeddings"
                .into(),
        )
        .into());
    };
    text_index(prompts, path, cfg, test)
}

#[cfg(feature = "onnx")]
fn text_index(
    prompts: &PromptSet,
    path: &Path,
    cfg: &FileConfig,
    test: &[ExemplarRecord],
) -> Result<ExemplarIndex, CliError> {
    use inspect_core::backend::OnnxTextEncoder;
    use inspect_core::tokenizer::ClipTokenizer;

    let dim = test.first().map(|r| r.embedding.dim());
    let fallback = dim.map(|d| (224, 32, d));
    let spec = cfg.model_spec(store_model(test), fallback)?;
    let encoder = OnnxTextEncoder::load(path, spec)?;
    Ok(prompts.index(ClipTokenizer::bundled()?, &encoder)?)
}

#[cfg(not(feature = "onnx"))]
fn text_index(
    _: &PromptSet,
    _: &Path,
    _: &FileConfig,
    _: &[ExemplarRecord],
) -> Result<ExemplarIndex, CliError> {
    Err(Error::Backend("this build has no ONNX support; rebuild with --features onnx".into()).into())
}

pub fn run_zero_shot(args: ZeroShotArgs) -> Result<(), CliError> {
    let cfg = args.model.resolve()?;
    let prompts = read_prompts(&args.prompts)?;
    let test = load_store(&args.test)?;
    let index = prompt_index(&prompts, &args, &cfg, &test)?
        .with_logit_scale(args.logit_scale)
        .map_err(CliError::usage)?;
    check_same_model(&index, &test)?;
    let results: Vec<_> = test
        .par_iter()
        .map(|r| classify_zero_shot(&r.id, &r.embedding, &index).and_then(|c| c.binary()))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for (record, outcome) in test.iter().zip(results) {
        rows.push(ResultRow::zero_shot(
            &timestamp(&args.fixed_timestamp),
            &record.id,
            &outcome?,
        ));
    }
    emit(&rows, &args.output)?;
    log::info!("classified {} images against {} prompt classes", rows.len(), index.classes().len());
    Ok(())
}
