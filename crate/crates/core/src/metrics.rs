//! Confusion matrices and the metrics derived from them.
//!
//! Zero-denominator ratios are reported as 0 and listed in the metric's
//! `undefined` field, so a reader can tell "0 because undefined" from a
//! genuine 0.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// K x K counts, rows = actual class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Label(format!(
                "confusion matrix needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(Error::Dimension {
                expected: classes.len(),
                actual: counts.len(),
            });
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn zeros(classes: Vec<String>) -> Result<Self> {
        let k = classes.len();
        Self::new(classes, vec![vec![0; k]; k])
    }

    /// Binary matrix with the negative class first.
    pub fn from_binary_counts(
        negative: &str,
        positive: &str,
        tp: u64,
        fn_: u64,
        fp: u64,
        tn: u64,
    ) -> Self {
        ConfusionMatrix {
            classes: vec![negative.to_string(), positive.to_string()],
            counts: vec![vec![tn, fp], vec![fn_, tp]],
        }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    fn position(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::Label(format!("unknown class {class:?}")))
    }

    /// CSV grid: header row and first column carry the class names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual\\predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(&csv_field(name));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Tallies `(actual, predicted)` pairs over a fixed class list.
pub fn build_confusion<S: AsRef<str>>(
    truth: &[S],
    predicted: &[S],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Label(format!(
            "{} truth labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes.to_vec())?;
    for (t, p) in truth.iter().zip(predicted) {
        let i = cm.position(t.as_ref())?;
        let j = cm.position(p.as_ref())?;
        cm.counts[i][j] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64, name: &'static str, undefined: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        undefined.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    /// Metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<&'static str>,
}

/// Binary metrics with `positive` as the positive class. When `scores` are
/// given, AUC is computed from them.
pub fn binary_metrics(
    cm: &ConfusionMatrix,
    positive: &str,
    scores: Option<&[(f64, bool)]>,
) -> Result<BinaryMetrics> {
    if cm.classes.len() != 2 {
        return Err(Error::Label(format!(
            "binary metrics need exactly 2 classes, got {}",
            cm.classes.len()
        )));
    }
    let p = cm.position(positive)?;
    let n = 1 - p;
    let (tp, fn_, fp, tn) = (cm.get(p, p), cm.get(p, n), cm.get(n, p), cm.get(n, n));
    let mut undefined = Vec::new();
    let accuracy = ratio(tp + tn, cm.total(), "accuracy", &mut undefined);
    let sensitivity = ratio(tp, tp + fn_, "sensitivity", &mut undefined);
    let specificity = ratio(tn, tn + fp, "specificity", &mut undefined);
    let precision = ratio(tp, tp + fp, "precision", &mut undefined);
    let f1 = harmonic(precision, sensitivity);
    let auc = scores.map(auc).transpose()?;
    Ok(BinaryMetrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy,
        sensitivity,
        specificity,
        precision,
        f1,
        auc,
        undefined,
    })
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs in which the
/// positive scores higher, ties counting one half.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    if let Some(i) = scores.iter().position(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidScore(i));
    }
    let positives = scores.iter().filter(|(_, p)| *p).count() as u64;
    let negatives = scores.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InsufficientClasses);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the number of winning pairs, kept integral.
    let mut doubled_wins: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled_wins += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(doubled_wins as f64 * 0.5 / (positives * negatives) as f64)
}

/// Per-class one-vs-all values and their unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub macro_sensitivity: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    pub undefined: Vec<&'static str>,
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    let k = cm.classes.len();
    if k < 2 {
        return Err(Error::Label("macro metrics need at least 2 classes".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|i| {
            let mut undefined = Vec::new();
            let diag = cm.get(i, i);
            let sensitivity = ratio(diag, cm.row_sum(i), "sensitivity", &mut undefined);
            let precision = ratio(diag, cm.col_sum(i), "precision", &mut undefined);
            ClassMetrics {
                class: cm.classes[i].clone(),
                sensitivity,
                precision,
                f1: harmonic(precision, sensitivity),
                undefined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let total = cm.total();
    Ok(MacroMetrics {
        accuracy: if total == 0 {
            0.0
        } else {
            cm.trace() as f64 / total as f64
        },
        macro_sensitivity: mean(|c| c.sensitivity),
        macro_precision: mean(|c| c.precision),
        macro_f1: mean(|c| c.f1),
        per_class,
    })
}

/// Terms recognized in free-text captions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocab {
    /// `(term as it appears in captions, canonical label)`.
    primary: Vec<(String, String)>,
    /// Scan order: longest first.
    severity: Vec<String>,
    /// Severities as given.
    severity_order: Vec<String>,
}

impl LabelVocab {
    pub fn new(primary: Vec<(String, String)>, severity: Vec<String>) -> Result<Self> {
        if primary.is_empty() {
            return Err(Error::EmptyInput("label vocabulary has no primary terms"));
        }
        let mut primary: Vec<(String, String)> = primary
            .into_iter()
            .map(|(t, c)| (t.to_lowercase(), c))
            .collect();
        // Longest first, so "band" never wins inside a longer term.
        primary.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        let severity_order: Vec<String> = severity.into_iter().map(|s| s.to_lowercase()).collect();
        let mut severity = severity_order.clone();
        severity.sort_by(|a, b| b.len().cmp(&a.len()));
        Ok(LabelVocab {
            primary,
            severity,
            severity_order,
        })
    }

    /// Microstructure defect classes and low/medium/high severities.
    pub fn microstructure() -> Self {
        let primary = [
            ("single crystal", "single-crystal"),
            ("single-crystal", "single-crystal"),
            ("bimodal", "bimodal"),
            ("band", "band"),
        ];
        LabelVocab::new(
            primary
                .iter()
                .map(|(t, c)| (t.to_string(), c.to_string()))
                .collect(),
            vec!["low".into(), "medium".into(), "high".into()],
        )
        .expect("static vocabulary")
    }

    pub fn severities(&self) -> &[String] {
        &self.severity_order
    }

    pub fn canonical_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, c) in &self.primary {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }
}

/// Primary label and, when a severity term also appears, `"<severity>
/// <label>"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedLabel {
    pub primary: String,
    pub sublabel: Option<String>,
}

/// Case-insensitive substring scan of `caption` against `vocab`.
pub fn extract_label(caption: &str, vocab: &LabelVocab) -> Result<ExtractedLabel> {
    let lower = caption.to_lowercase();
    let (_, primary) = vocab
        .primary
        .iter()
        .find(|(term, _)| lower.contains(term.as_str()))
        .ok_or_else(|| Error::UnlabeledCaption(caption.to_string()))?;
    let sublabel = vocab
        .severity
        .iter()
        .find(|s| lower.contains(s.as_str()))
        .map(|s| format!("{s} {primary}"));
    Ok(ExtractedLabel {
        primary: primary.clone(),
        sublabel,
    })
}

/// Key-value text rendering of binary metrics.
pub fn binary_report(m: &BinaryMetrics, auc_source: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy: {:.3}", m.accuracy);
    let _ = writeln!(out, "sensitivity: {:.3}", m.sensitivity);
    let _ = writeln!(out, "specificity: {:.3}", m.specificity);
    let _ = writeln!(out, "precision: {:.3}", m.precision);
    let _ = writeln!(out, "f1: {:.3}", m.f1);
    match m.auc {
        Some(a) => {
            let _ = writeln!(out, "auc: {a:.3}");
        }
        None => out.push_str("auc: n/a\n"),
    }
    let _ = writeln!(out, "auc_score_source: {auc_source}");
    let _ = writeln!(out, "tp: {}", m.tp);
    let _ = writeln!(out, "fp: {}", m.fp);
    let _ = writeln!(out, "fn: {}", m.fn_);
    let _ = writeln!(out, "tn: {}", m.tn);
    if !m.undefined.is_empty() {
        let _ = writeln!(out, "zero_denominator: {}", m.undefined.join(" "));
    }
    out
}

/// Key-value text rendering of macro-averaged metrics.
pub fn macro_report(m: &MacroMetrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy: {:.3}", m.accuracy);
    let _ = writeln!(out, "macro_sensitivity: {:.3}", m.macro_sensitivity);
    let _ = writeln!(out, "macro_precision: {:.3}", m.macro_precision);
    let _ = writeln!(out, "macro_f1: {:.3}", m.macro_f1);
    for c in &m.per_class {
        let _ = writeln!(
            out,
            "class.{}: sensitivity={:.3} precision={:.3} f1={:.3}",
            c.class, c.sensitivity, c.precision, c.f1
        );
    }
    out
}
