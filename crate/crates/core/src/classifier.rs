//! Nearest-exemplar classification.
//!
//! A query's score for a class is its maximum cosine similarity to any
//! exemplar of that class; the verdict is the class with the highest score.
//! Zero-shot classification is the same rule with one text embedding per
//! prompt standing in for the exemplars.
//!
//! Classes are ordered nominal first, then defect classes in declared
//! order. Exact score ties resolve toward the later class, so a tie between
//! nominal and a defect class flags the image as defective.

use rayon::prelude::*;
use serde::Serialize;

use crate::backend::TextEncoder;
use crate::embedding::{argmax_last, cosine_similarity, softmax, Embedding};
use crate::error::{Error, Result};
use crate::store::ExemplarRecord;
use crate::tokenizer::ClipTokenizer;

pub const NOMINAL: &str = "Nominal";
pub const DEFECTIVE: &str = "Defective";

/// Whether a class label names the conforming class.
pub fn is_nominal_label(label: &str) -> bool {
    label.trim().eq_ignore_ascii_case("nominal")
}

/// Per-class exemplar sets queried by maximum similarity.
#[derive(Debug, Clone)]
pub struct ExemplarIndex {
    classes: Vec<String>,
    exemplars: Vec<Vec<ExemplarRecord>>,
    model_id: String,
    dim: usize,
    nominal: usize,
    logit_scale: f64,
}

impl ExemplarIndex {
    /// Groups records by label. A class labeled "nominal" (any case) goes
    /// first; the others keep their first-seen order.
    pub fn from_records(records: impl IntoIterator<Item = ExemplarRecord>) -> Result<Self> {
        let mut groups: Vec<(String, Vec<ExemplarRecord>)> = Vec::new();
        for r in records {
            match groups.iter_mut().find(|(label, _)| *label == r.label) {
                Some((_, members)) => members.push(r),
                None => groups.push((r.label.clone(), vec![r])),
            }
        }
        if let Some(pos) = groups.iter().position(|(label, _)| is_nominal_label(label)) {
            let nominal = groups.remove(pos);
            groups.insert(0, nominal);
        }
        Self::from_classes(groups)
    }

    /// Uses the given class order as-is. The nominal class is the one
    /// labeled "nominal", or the first class when none is.
    pub fn from_classes(groups: Vec<(String, Vec<ExemplarRecord>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::EmptyInput("exemplar index needs at least one class"));
        }
        let first = groups
            .iter()
            .flat_map(|(_, m)| m.first())
            .next()
            .ok_or(Error::EmptyInput("exemplar index has no exemplars"))?;
        let model_id = first.embedding.model_id().to_string();
        let dim = first.embedding.dim();
        for (label, members) in &groups {
            if members.is_empty() {
                return Err(Error::EmptyInput("every class needs at least one exemplar"));
            }
            if label.trim().is_empty() {
                return Err(Error::Label("empty class name".into()));
            }
            for m in members {
                if m.embedding.model_id() != model_id {
                    return Err(Error::Consistency(format!(
                        "exemplar {:?} comes from {:?}, index uses {model_id:?}",
                        m.id,
                        m.embedding.model_id()
                    )));
                }
                if m.embedding.dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        actual: m.embedding.dim(),
                    });
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some((dup, _)) = groups.iter().find(|(l, _)| !seen.insert(l.as_str())) {
            return Err(Error::Label(format!("duplicate class {dup:?}")));
        }
        let nominal = groups
            .iter()
            .position(|(l, _)| is_nominal_label(l))
            .unwrap_or(0);
        let (classes, exemplars) = groups.into_iter().unzip();
        Ok(ExemplarIndex {
            classes,
            exemplars,
            model_id,
            dim,
            nominal,
            logit_scale: 1.0,
        })
    }

    /// Multiplies scores by `scale` before the softmax. The default is 1.
    pub fn with_logit_scale(mut self, scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Param(format!("logit scale must be positive, got {scale}")));
        }
        self.logit_scale = scale;
        Ok(self)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn exemplars(&self, class: &str) -> Result<&[ExemplarRecord]> {
        Ok(&self.exemplars[self.class_position(class)?])
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nominal_class(&self) -> &str {
        &self.classes[self.nominal]
    }

    pub fn nominal_count(&self) -> usize {
        self.exemplars[self.nominal].len()
    }

    pub fn len(&self) -> usize {
        self.exemplars.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn class_position(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::ClassNotFound(class.to_string()))
    }

    fn check_query(&self, x: &Embedding) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: x.dim(),
            });
        }
        Ok(())
    }

    /// Best similarity and position of the best exemplar within one class;
    /// the first exemplar wins exact ties.
    fn best_in_class(&self, x: &Embedding, class: usize) -> Result<(f64, usize)> {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, e) in self.exemplars[class].iter().enumerate() {
            let s = cosine_similarity(x, &e.embedding)?;
            if s > best.0 {
                best = (s, k);
            }
        }
        Ok(best)
    }
}

/// Maximum similarity between `x` and the exemplars of `class`.
pub fn class_score(x: &Embedding, index: &ExemplarIndex, class: &str) -> Result<f64> {
    index.check_query(x)?;
    let c = index.class_position(class)?;
    Ok(index.best_in_class(x, c)?.0)
}

/// The exemplar (or prompt) that produced a class score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nearest {
    pub exemplar_id: String,
    pub caption: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationResult {
    pub image_id: String,
    pub classes: Vec<String>,
    pub verdict: String,
    pub class_scores: Vec<f64>,
    pub class_probs: Vec<f64>,
    pub nearest: Vec<Nearest>,
    nominal: usize,
    logit_scale: f64,
}

/// Two-way view of a result: nominal class against every defect class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryOutcome {
    pub defective: bool,
    pub non_defect_prob: f64,
    pub defect_prob: f64,
    pub nominal: Nearest,
    /// Nearest exemplar of the best-scoring defect class.
    pub defect: Nearest,
    pub defect_class: String,
}

impl BinaryOutcome {
    pub fn verdict(&self) -> &'static str {
        if self.defective {
            DEFECTIVE
        } else {
            NOMINAL
        }
    }
}

impl ClassificationResult {
    pub fn score(&self, class: &str) -> Option<f64> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.class_scores[i])
    }

    pub fn prob(&self, class: &str) -> Option<f64> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.class_probs[i])
    }

    pub fn nominal_class(&self) -> &str {
        &self.classes[self.nominal]
    }

    /// Collapses all non-nominal classes into one defect class scored by
    /// their maximum, with probabilities from the two-class softmax.
    pub fn binary(&self) -> Result<BinaryOutcome> {
        if self.classes.len() < 2 {
            return Err(Error::Label(
                "binary view needs a nominal and at least one defect class".into(),
            ));
        }
        let defect_scores: Vec<f64> = self
            .class_scores
            .iter()
            .enumerate()
            .map(|(i, &s)| if i == self.nominal { f64::NEG_INFINITY } else { s })
            .collect();
        let best = argmax_last(&defect_scores).expect("at least two classes");
        let nominal_score = self.class_scores[self.nominal];
        let defect_score = self.class_scores[best];
        let p = softmax(&[
            nominal_score * self.logit_scale,
            defect_score * self.logit_scale,
        ])?;
        Ok(BinaryOutcome {
            defective: defect_score >= nominal_score,
            non_defect_prob: p[0],
            defect_prob: p[1],
            nominal: self.nearest[self.nominal].clone(),
            defect: self.nearest[best].clone(),
            defect_class: self.classes[best].clone(),
        })
    }
}

/// Scores `x` against every class and picks the highest-scoring one.
pub fn classify_few_shot(
    image_id: &str,
    x: &Embedding,
    index: &ExemplarIndex,
) -> Result<ClassificationResult> {
    index.check_query(x)?;
    let mut class_scores = Vec::with_capacity(index.classes.len());
    let mut nearest = Vec::with_capacity(index.classes.len());
    for c in 0..index.classes.len() {
        let (score, k) = index.best_in_class(x, c)?;
        let e = &index.exemplars[c][k];
        class_scores.push(score);
        nearest.push(Nearest {
            exemplar_id: e.id.clone(),
            caption: e.caption.clone(),
            similarity: score,
        });
    }
    let verdict = argmax_last(&class_scores).expect("index has classes");
    let scaled: Vec<f64> = class_scores.iter().map(|s| s * index.logit_scale).collect();
    Ok(ClassificationResult {
        image_id: image_id.to_string(),
        classes: index.classes.clone(),
        verdict: index.classes[verdict].clone(),
        class_probs: softmax(&scaled)?,
        class_scores,
        nearest,
        nominal: index.nominal,
        logit_scale: index.logit_scale,
    })
}

/// Whether a batch stops at the first failing item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BatchPolicy {
    #[default]
    Continue,
    FailFast,
}

/// Classifies every query in parallel; output order matches input order.
///
/// With [`BatchPolicy::Continue`] per-item failures are returned in place;
/// with [`BatchPolicy::FailFast`] the first failure (in input order) aborts
/// the batch.
pub fn classify_batch(
    queries: &[ExemplarRecord],
    index: &ExemplarIndex,
    policy: BatchPolicy,
) -> Result<Vec<Result<ClassificationResult>>> {
    let results: Vec<Result<ClassificationResult>> = queries
        .par_iter()
        .map(|q| classify_few_shot(&q.id, &q.embedding, index))
        .collect();
    if policy == BatchPolicy::FailFast {
        if let Some(pos) = results.iter().position(Result::is_err) {
            let mut results = results;
            return Err(results.swap_remove(pos).unwrap_err());
        }
    }
    Ok(results)
}

/// Text prompts per class; each class needs at least one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    entries: Vec<(String, Vec<String>)>,
}

impl PromptSet {
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("prompt set has no classes"));
        }
        for (class, prompts) in &entries {
            if prompts.is_empty() || prompts.iter().any(|p| p.trim().is_empty()) {
                return Err(Error::EmptyInput("every class needs a nonempty prompt"));
            }
            if class.trim().is_empty() {
                return Err(Error::Label("empty class name".into()));
            }
        }
        Ok(PromptSet { entries })
    }

    /// One class per prompt, named by the prompt itself.
    pub fn from_prompts<S: AsRef<str>>(prompts: &[S]) -> Result<Self> {
        Self::new(
            prompts
                .iter()
                .map(|p| (p.as_ref().to_string(), vec![p.as_ref().to_string()]))
                .collect(),
        )
    }

    /// Appends a prompt, creating the class if needed.
    pub fn push(&mut self, class: &str, prompt: &str) {
        match self.entries.iter_mut().find(|(c, _)| c == class) {
            Some((_, prompts)) => prompts.push(prompt.to_string()),
            None => self
                .entries
                .push((class.to_string(), vec![prompt.to_string()])),
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(c, _)| c.as_str())
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.entries
    }

    /// Builds a prompt index from embeddings supplied per prompt text.
    pub fn index_with(
        &self,
        mut embed: impl FnMut(&str) -> Result<Embedding>,
    ) -> Result<ExemplarIndex> {
        let mut groups = Vec::with_capacity(self.entries.len());
        for (class, prompts) in &self.entries {
            let mut members = Vec::with_capacity(prompts.len());
            for p in prompts {
                members.push(ExemplarRecord::new(p.clone(), class.clone(), embed(p)?)?.with_caption(p));
            }
            groups.push((class.clone(), members));
        }
        ExemplarIndex::from_classes(groups)
    }

    /// Tokenizes and encodes every prompt with a text tower.
    pub fn index(
        &self,
        tokenizer: &ClipTokenizer,
        encoder: &dyn TextEncoder,
    ) -> Result<ExemplarIndex> {
        self.index_with(|p| encoder.encode_text(&tokenizer.tokenize(p)?))
    }
}

/// Scores `x` against text prompt embeddings; a class with several prompts
/// takes the best one. `nearest` carries the winning prompt text.
pub fn classify_zero_shot(
    image_id: &str,
    x: &Embedding,
    prompts: &ExemplarIndex,
) -> Result<ClassificationResult> {
    classify_few_shot(image_id, x, prompts)
}

/// Encodes the prompts with `encoder` and classifies `x` against them.
pub fn classify_zero_shot_with(
    image_id: &str,
    x: &Embedding,
    prompts: &PromptSet,
    tokenizer: &ClipTokenizer,
    encoder: &dyn TextEncoder,
) -> Result<ClassificationResult> {
    if encoder.spec().dim != x.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            actual: encoder.spec().dim,
        });
    }
    classify_zero_shot(image_id, x, &prompts.index(tokenizer, encoder)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new("toy", v.to_vec()).unwrap()
    }

    fn rec(id: &str, label: &str, v: &[f64]) -> ExemplarRecord {
        ExemplarRecord::new(id, label, e(v))
            .unwrap()
            .with_caption(format!("caption of {id}"))
    }

    fn toy_index() -> ExemplarIndex {
        ExemplarIndex::from_records(vec![
            rec("d1", "defective", &[0.0, 1.0, 0.2]),
            rec("n1", "nominal", &[1.0, 0.1, 0.0]),
            rec("n2", "nominal", &[0.8, 0.0, 0.6]),
            rec("d2", "defective", &[0.1, 0.9, -0.4]),
        ])
        .unwrap()
    }

    #[test]
    fn nominal_goes_first() {
        let idx = toy_index();
        assert_eq!(idx.classes(), &["nominal", "defective"]);
        assert_eq!(idx.nominal_count(), 2);
        assert_eq!(idx.len(), 4);
    }

    #[test]
    fn self_similarity_scores_one() {
        let idx = toy_index();
        let s = class_score(&e(&[0.8, 0.0, 0.6]), &idx, "nominal").unwrap();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn class_score_matches_exhaustive_loop() {
        let idx = toy_index();
        let x = e(&[0.3, 0.5, -0.2]);
        for class in ["nominal", "defective"] {
            let mut best = f64::NEG_INFINITY;
            for ex in idx.exemplars(class).unwrap() {
                let a = x.values();
                let b = ex.embedding.values();
                let dot: f64 = (0..3).map(|i| a[i] * b[i]).sum();
                let na: f64 = (0..3).map(|i| a[i] * a[i]).sum::<f64>().sqrt();
                let nb: f64 = (0..3).map(|i| b[i] * b[i]).sum::<f64>().sqrt();
                best = best.max(dot / (na * nb));
            }
            assert_eq!(class_score(&x, &idx, class).unwrap(), best);
        }
    }

    #[test]
    fn singleton_class_score_is_plain_cosine() {
        let idx = ExemplarIndex::from_records(vec![
            rec("n", "nominal", &[1.0, 2.0]),
            rec("d", "defective", &[2.0, -1.0]),
        ])
        .unwrap();
        let x = e(&[0.5, 0.5]);
        assert_eq!(
            class_score(&x, &idx, "defective").unwrap(),
            cosine_similarity(&x, &e(&[2.0, -1.0])).unwrap()
        );
        assert!(matches!(
            class_score(&x, &idx, "scratch"),
            Err(Error::ClassNotFound(_))
        ));
    }

    #[test]
    fn identical_to_defect_exemplar() {
        let idx = ExemplarIndex::from_records(vec![
            rec("n1", "nominal", &[0.0, 1.0, 0.0]),
            rec("n2", "nominal", &[0.0, 0.0, 1.0]),
            rec("d1", "defective", &[1.0, 0.0, 0.0]),
        ])
        .unwrap();
        let r = classify_few_shot("q", &e(&[1.0, 0.0, 0.0]), &idx).unwrap();
        assert_eq!(r.verdict, "defective");
        assert_eq!(r.score("defective"), Some(1.0));
        assert_eq!(r.nearest[1].exemplar_id, "d1");
    }

    #[test]
    fn two_class_probabilities() {
        // Unit vectors at angles chosen so the class cosines differ by
        // ln(0.505 / 0.495).
        let gap = (0.505f64 / 0.495).ln();
        let (sn, sd) = (0.90f64, 0.90 + gap);
        let x = e(&[1.0, 0.0, 0.0]);
        let n = e(&[sn, (1.0 - sn * sn).sqrt(), 0.0]);
        let d = e(&[sd, 0.0, (1.0 - sd * sd).sqrt()]);
        let idx = ExemplarIndex::from_records(vec![
            ExemplarRecord::new("microstructure_234.png", "Nominal", n).unwrap(),
            ExemplarRecord::new("microstructure_001.png", "Defective", d).unwrap(),
        ])
        .unwrap();
        let r = classify_few_shot("microstructure_039.png", &x, &idx).unwrap();
        assert_eq!(r.verdict, "Defective");
        let b = r.binary().unwrap();
        assert!(b.defective);
        assert_eq!(format!("{:.3}", b.non_defect_prob), "0.495");
        assert_eq!(format!("{:.3}", b.defect_prob), "0.505");
        let psum: f64 = r.class_probs.iter().sum();
        assert!((psum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_tie_flags_defective() {
        let idx = ExemplarIndex::from_records(vec![
            rec("d", "defective", &[0.0, 1.0]),
            rec("n", "nominal", &[1.0, 0.0]),
        ])
        .unwrap();
        let r = classify_few_shot("q", &e(&[1.0, 1.0]), &idx).unwrap();
        assert_eq!(r.class_scores[0], r.class_scores[1]);
        assert_eq!(r.verdict, "defective");
        assert!(r.binary().unwrap().defective);
    }

    #[test]
    fn dimension_mismatch() {
        let idx = toy_index();
        assert!(matches!(
            classify_few_shot("q", &e(&[1.0, 0.0]), &idx),
            Err(Error::Dimension { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn index_invariants() {
        assert!(ExemplarIndex::from_records(Vec::new()).is_err());
        let mixed = vec![
            rec("a", "nominal", &[1.0, 0.0]),
            ExemplarRecord::new("b", "defective", Embedding::new("other", vec![1.0, 0.0]).unwrap())
                .unwrap(),
        ];
        assert!(matches!(
            ExemplarIndex::from_records(mixed),
            Err(Error::Consistency(_))
        ));
        assert!(ExemplarIndex::from_classes(vec![("a".into(), vec![])]).is_err());
    }

    #[test]
    fn multi_class_binary_collapse() {
        let idx = ExemplarIndex::from_records(vec![
            rec("n", "nominal", &[1.0, 0.0, 0.0]),
            rec("b", "band", &[0.0, 1.0, 0.0]),
            rec("s", "single-crystal", &[0.0, 0.0, 1.0]),
        ])
        .unwrap();
        let r = classify_few_shot("q", &e(&[0.5, 0.1, 0.6]), &idx).unwrap();
        assert_eq!(r.verdict, "single-crystal");
        let b = r.binary().unwrap();
        assert!(b.defective);
        assert_eq!(b.defect_class, "single-crystal");
        assert_eq!(b.defect.exemplar_id, "s");
        assert!((b.non_defect_prob + b.defect_prob - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_matches_singles_and_empty() {
        let idx = toy_index();
        assert!(classify_batch(&[], &idx, BatchPolicy::Continue)
            .unwrap()
            .is_empty());
        let queries: Vec<ExemplarRecord> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.3;
                rec(&format!("q{i}"), "nominal", &[t.cos(), t.sin(), 0.1 * t])
            })
            .collect();
        let batch = classify_batch(&queries, &idx, BatchPolicy::Continue).unwrap();
        for (q, r) in queries.iter().zip(batch) {
            assert_eq!(r.unwrap(), classify_few_shot(&q.id, &q.embedding, &idx).unwrap());
        }
    }

    #[test]
    fn batch_error_policies() {
        let idx = toy_index();
        let queries = vec![
            rec("ok", "nominal", &[1.0, 0.0, 0.0]),
            rec("bad", "nominal", &[1.0, 0.0]),
            rec("ok2", "nominal", &[0.0, 1.0, 0.0]),
        ];
        let out = classify_batch(&queries, &idx, BatchPolicy::Continue).unwrap();
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
        assert!(classify_batch(&queries, &idx, BatchPolicy::FailFast).is_err());
    }

    #[test]
    fn zero_shot_self_match_and_ties() {
        let prompts = PromptSet::new(vec![
            ("nominal".into(), vec!["a clean part".into()]),
            ("defective".into(), vec!["a scratched part".into(), "a dented part".into()]),
        ])
        .unwrap();
        let table = |p: &str| -> Result<Embedding> {
            Ok(match p {
                "a clean part" => e(&[1.0, 0.0, 0.0]),
                "a scratched part" => e(&[0.0, 1.0, 0.0]),
                _ => e(&[0.0, 0.0, 1.0]),
            })
        };
        let idx = prompts.index_with(table).unwrap();
        let r = classify_zero_shot("q", &e(&[0.0, 0.0, 2.0]), &idx).unwrap();
        assert_eq!(r.verdict, "defective");
        assert_eq!(r.score("defective"), Some(1.0));
        assert_eq!(r.nearest[1].caption, "a dented part");

        // Equal similarity to both defect prompts: the first listed prompt
        // is reported, every run.
        let tie = e(&[0.0, 1.0, 1.0]);
        for _ in 0..3 {
            let r = classify_zero_shot("q", &tie, &idx).unwrap();
            assert_eq!(r.nearest[1].caption, "a scratched part");
        }
        // Equal similarity across classes resolves to the later class.
        let across = e(&[1.0, 1.0, 0.0]);
        assert_eq!(classify_zero_shot("q", &across, &idx).unwrap().verdict, "defective");
    }

    #[test]
    fn prompt_set_validation() {
        assert!(PromptSet::new(vec![]).is_err());
        assert!(PromptSet::new(vec![("a".into(), vec![])]).is_err());
        assert!(PromptSet::new(vec![("a".into(), vec!["  ".into()])]).is_err());
        let mut p = PromptSet::from_prompts(&["x"]).unwrap();
        p.push("y", "why");
        p.push("x", "ex");
        assert_eq!(p.entries()[0].1, vec!["x", "ex"]);
        assert_eq!(p.classes().collect::<Vec<_>>(), vec!["x", "y"]);
    }
}
