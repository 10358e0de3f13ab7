use std::collections::HashMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use inspect_core::classifier::{is_nominal_label, DEFECTIVE, NOMINAL};
use inspect_core::metrics::{binary_report, macro_report};
use inspect_core::results::{read_results, ResultRow};
use inspect_core::{
    binary_metrics, build_confusion, extract_label, macro_metrics, ConfusionMatrix, Error,
    LabelVocab,
};
use serde::{Deserialize, Serialize};

use crate::embed::{read_labels, LabelRow};
use crate::error::CliError;

const NOMINAL_CLASS: &str = "nominal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Nominal versus defective.
    Binary,
    /// Primary defect class extracted from the winning description.
    Primary,
    /// Severity plus primary class.
    Sublabel,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Results CSV written by classify or zeroshot.
    #[arg(long)]
    results: PathBuf,
    /// Truth labels CSV (id,label,sublabel,caption).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Binary)]
    mode: Mode,
    /// Key-value report [default: stdout].
    #[arg(long)]
    report: Option<PathBuf>,
    /// Machine-readable report.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Confusion matrix CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Label vocabulary CSV (kind,term,canonical; kind is primary or
    /// severity) [default: microstructure classes with low/medium/high].
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Deserialize)]
struct VocabRow {
    kind: String,
    term: String,
    #[serde(default)]
    canonical: String,
}

fn read_vocab(path: &Path) -> Result<LabelVocab, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read vocabulary {}: {e}", path.display())))?;
    let (mut primary, mut severity) = (Vec::new(), Vec::new());
    for row in reader.deserialize() {
        let row: VocabRow = row?;
        match row.kind.as_str() {
            "primary" => {
                let canonical = if row.canonical.is_empty() { row.term.clone() } else { row.canonical };
                primary.push((row.term.to_lowercase(), canonical));
            }
            "severity" => severity.push(row.term.to_lowercase()),
            other => return Err(CliError::usage(format!("unknown vocabulary kind {other:?}"))),
        }
    }
    LabelVocab::new(primary, severity).map_err(CliError::usage)
}

/// Pairs every result with its truth row; unknown ids are a label error.
fn join<'a>(
    results: &'a [ResultRow],
    truth: &'a [LabelRow],
) -> Result<Vec<(&'a ResultRow, &'a LabelRow)>, CliError> {
    let by_id: HashMap<&str, &LabelRow> = truth.iter().map(|t| (t.id.as_str(), t)).collect();
    let missing: Vec<&str> = results
        .iter()
        .filter(|r| !by_id.contains_key(r.image_name.as_str()))
        .map(|r| r.image_name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Label(format!(
            "{} result id(s) missing from the truth labels: {}",
            missing.len(),
            missing.join(", ")
        ))
        .into());
    }
    Ok(results
        .iter()
        .map(|r| (r, by_id[r.image_name.as_str()]))
        .collect())
}

fn predicted_defective(r: &ResultRow) -> Result<bool, CliError> {
    match r.classification_result.as_str() {
        DEFECTIVE => Ok(true),
        NOMINAL => Ok(false),
        other => Err(Error::Label(format!(
            "{}: unknown classification_result {other:?}",
            r.image_name
        ))
        .into()),
    }
}

#[derive(Serialize)]
struct MultiClassJson<'a> {
    mode: &'a str,
    metrics: &'a inspect_core::MacroMetrics,
    confusion: &'a ConfusionMatrix,
}

/// Truth class of one row in primary or sublabel mode.
fn truth_class(t: &LabelRow, mode: Mode, vocab: &LabelVocab) -> Result<String, CliError> {
    if is_nominal_label(&t.label) {
        return Ok(NOMINAL_CLASS.to_string());
    }
    let text = match mode {
        Mode::Sublabel if !t.sublabel.is_empty() => format!("{} {}", t.sublabel, t.label),
        _ => t.label.clone(),
    };
    let extracted = extract_label(&text, vocab)?;
    match mode {
        Mode::Sublabel => extracted.sublabel.ok_or_else(|| {
            Error::Label(format!("{}: truth has no severity term", t.id)).into()
        }),
        _ => Ok(extracted.primary),
    }
}

/// Predicted class: nominal, or the label extracted from the nearest
/// defective description.
fn predicted_class(r: &ResultRow, mode: Mode, vocab: &LabelVocab) -> Result<String, CliError> {
    if !predicted_defective(r)? {
        return Ok(NOMINAL_CLASS.to_string());
    }
    let extracted = extract_label(&r.defective_description, vocab)?;
    match mode {
        Mode::Sublabel => extracted.sublabel.ok_or_else(|| {
            Error::Label(format!("{}: description has no severity term", r.image_name)).into()
        }),
        _ => Ok(extracted.primary),
    }
}

fn class_list(mode: Mode, vocab: &LabelVocab) -> Vec<String> {
    let mut primary = vocab.canonical_labels();
    primary.sort();
    let mut classes = vec![NOMINAL_CLASS.to_string()];
    match mode {
        Mode::Sublabel => {
            for p in &primary {
                classes.extend(vocab.severities().iter().map(|s| format!("{s} {p}")));
            }
        }
        _ => classes.extend(primary),
    }
    classes
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let file = File::open(&args.results)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", args.results.display())))?;
    let results = read_results(file)?;
    if !args.truth.is_file() {
        return Err(CliError::usage(format!("truth labels {} not found", args.truth.display())));
    }
    let truth = read_labels(&args.truth)?;
    let pairs = join(&results, &truth)?;

    let (report, json, cm) = match args.mode {
        Mode::Binary => {
            let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
            let mut scores = Vec::with_capacity(pairs.len());
            for (r, t) in &pairs {
                let actual = !is_nominal_label(&t.label);
                match (actual, predicted_defective(r)?) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, true) => fp += 1,
                    (false, false) => tn += 1,
                }
                scores.push((r.defect_prob, actual));
            }
            let cm = ConfusionMatrix::from_binary_counts(NOMINAL, DEFECTIVE, tp, fn_, fp, tn);
            let both = scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1);
            let m = binary_metrics(&cm, DEFECTIVE, both.then_some(scores.as_slice()))?;
            let report = binary_report(&m, "defect_prob");
            let json = serde_json::to_string_pretty(&m).map_err(anyhow::Error::from)?;
            (report, json, cm)
        }
        mode => {
            let vocab = match &args.vocab {
                Some(path) => read_vocab(path)?,
                None => LabelVocab::microstructure(),
            };
            let mut actual = Vec::with_capacity(pairs.len());
            let mut predicted = Vec::with_capacity(pairs.len());
            for (r, t) in &pairs {
                actual.push(truth_class(t, mode, &vocab)?);
                predicted.push(predicted_class(r, mode, &vocab)?);
            }
            let cm = build_confusion(&actual, &predicted, &class_list(mode, &vocab))?;
            let m = macro_metrics(&cm)?;
            let name = if mode == Mode::Primary { "primary" } else { "sublabel" };
            let json = serde_json::to_string_pretty(&MultiClassJson {
                mode: name,
                metrics: &m,
                confusion: &cm,
            })
            .map_err(anyhow::Error::from)?;
            (macro_report(&m), json, cm)
        }
    };

    match &args.report {
        Some(path) => write_file(path, &report)?,
        None => print!("{report}"),
    }
    if let Some(path) = &args.json {
        write_file(path, &format!("{json}\n"))?;
    }
    if let Some(path) = &args.confusion {
        write_file(path, &cm.to_csv())?;
    }
    Ok(())
}
