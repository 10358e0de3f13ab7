//! Learning/test splits and learning-curve experiments.
//!
//! Records are grouped by label: the nominal group, and one group per defect
//! subtype in first-seen order. "n per class" means n nominal exemplars and
//! n defective exemplars, the latter spread over the subtypes as evenly as
//! possible with any remainder going to the earlier subtypes.
//!
//! Curve subsamples are nested: each group is shuffled once with the
//! experiment seed and every curve point takes a prefix of that shuffle.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::{classify_batch, is_nominal_label, BatchPolicy, ExemplarIndex};
use crate::error::{Error, Result};
use crate::metrics::{binary_metrics, BinaryMetrics, ConfusionMatrix};
use crate::sts::splitmix64;
use crate::store::ExemplarRecord;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    /// Seeded random sample of each group.
    BalancedRandom,
    /// Store order is time order: learn on the first records of each group.
    Chronological,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPlan {
    pub strategy: SplitStrategy,
    pub n_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub learning: Vec<ExemplarRecord>,
    pub test: Vec<ExemplarRecord>,
}

/// Record positions per group; group 0 is nominal.
struct Groups {
    names: Vec<String>,
    members: Vec<Vec<usize>>,
}

impl Groups {
    fn of(records: &[ExemplarRecord]) -> Result<Self> {
        let mut names = vec![String::new()];
        let mut members: Vec<Vec<usize>> = vec![Vec::new()];
        for (i, r) in records.iter().enumerate() {
            if is_nominal_label(&r.label) {
                if names[0].is_empty() {
                    names[0] = r.label.clone();
                }
                members[0].push(i);
                continue;
            }
            match names.iter().skip(1).position(|n| *n == r.label) {
                Some(g) => members[g + 1].push(i),
                None => {
                    names.push(r.label.clone());
                    members.push(vec![i]);
                }
            }
        }
        if members[0].is_empty() {
            return Err(Error::InsufficientData {
                class: "nominal".into(),
                needed: 1,
                available: 0,
            });
        }
        if names.len() < 2 {
            return Err(Error::InsufficientData {
                class: "defective".into(),
                needed: 1,
                available: 0,
            });
        }
        Ok(Groups { names, members })
    }

    fn shuffled(&self, seed: u64) -> Vec<Vec<usize>> {
        self.members
            .iter()
            .enumerate()
            .map(|(g, m)| {
                let mut m = m.clone();
                let mut rng = Pcg64::seed_from_u64(splitmix64(seed.wrapping_add(g as u64)));
                m.shuffle(&mut rng);
                m
            })
            .collect()
    }

    /// Per-group take counts for `n` per class.
    fn allocation(&self, n: usize) -> Vec<usize> {
        let subtypes = self.names.len() - 1;
        let mut out = vec![n];
        out.extend((0..subtypes).map(|k| n / subtypes + usize::from(k < n % subtypes)));
        out
    }

    fn check(&self, n: usize) -> Result<()> {
        for (g, take) in self.allocation(n).into_iter().enumerate() {
            if take > self.members[g].len() {
                return Err(Error::InsufficientData {
                    class: self.names[g].clone(),
                    needed: take,
                    available: self.members[g].len(),
                });
            }
        }
        Ok(())
    }

    /// Positions of the first `n`-per-class records of each ordering.
    fn take(&self, order: &[Vec<usize>], n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .allocation(n)
            .into_iter()
            .zip(order)
            .flat_map(|(take, o)| o[..take].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Splits `records` into a learning set with `n_per_class` nominal and
/// `n_per_class` defective records, and a test set with everything else.
pub fn make_split(records: &[ExemplarRecord], plan: &SplitPlan) -> Result<Split> {
    let groups = Groups::of(records)?;
    groups.check(plan.n_per_class)?;
    let order = match plan.strategy {
        SplitStrategy::BalancedRandom => groups.shuffled(plan.seed),
        SplitStrategy::Chronological => groups.members.clone(),
    };
    let chosen: HashSet<usize> = groups.take(&order, plan.n_per_class).into_iter().collect();
    let (learning, test) = records
        .iter()
        .enumerate()
        .partition::<Vec<_>, _>(|(i, _)| chosen.contains(i));
    Ok(Split {
        learning: learning.into_iter().map(|(_, r)| r.clone()).collect(),
        test: test.into_iter().map(|(_, r)| r.clone()).collect(),
    })
}

/// Classifies `test` against `index` and scores the nominal/defective
/// verdicts, using the defect probability as the AUC ranking score.
pub fn evaluate_binary(test: &[ExemplarRecord], index: &ExemplarIndex) -> Result<BinaryMetrics> {
    let results = classify_batch(test, index, BatchPolicy::FailFast)?;
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    let mut scores = Vec::with_capacity(test.len());
    for (record, result) in test.iter().zip(results) {
        let outcome = result?.binary()?;
        let actual = !is_nominal_label(&record.label);
        match (actual, outcome.defective) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
        scores.push((outcome.defect_prob, actual));
    }
    let cm = ConfusionMatrix::from_binary_counts("Nominal", "Defective", tp, fn_, fp, tn);
    let has_both = scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1);
    binary_metrics(&cm, "Defective", has_both.then_some(scores.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n_per_class: usize,
    pub metrics: BinaryMetrics,
    pub seed: u64,
    pub model_id: String,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::EmptyInput("learning curve needs at least one size"));
    }
    if sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Param(format!(
            "sizes must be positive and strictly ascending: {sizes:?}"
        )));
    }
    Ok(())
}

/// Ids of the nested learning subsets, one list per size.
pub fn nested_subsets(
    pool: &[ExemplarRecord],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    check_sizes(sizes)?;
    let groups = Groups::of(pool)?;
    groups.check(*sizes.last().expect("nonempty"))?;
    let order = groups.shuffled(seed);
    Ok(sizes
        .iter()
        .map(|&n| {
            groups
                .take(&order, n)
                .into_iter()
                .map(|i| pool[i].id.clone())
                .collect()
        })
        .collect())
}

/// Builds an index from each nested subsample of `pool` and evaluates it on
/// the fixed `test` set.
pub fn learning_curve(
    pool: &[ExemplarRecord],
    test: &[ExemplarRecord],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    learning_curve_with(pool, test, sizes, seed, |r| ExemplarIndex::from_records(r))
}

pub fn learning_curve_with<F>(
    pool: &[ExemplarRecord],
    test: &[ExemplarRecord],
    sizes: &[usize],
    seed: u64,
    build: F,
) -> Result<Vec<CurvePoint>>
where
    F: Fn(Vec<ExemplarRecord>) -> Result<ExemplarIndex> + Sync,
{
    let subsets = nested_subsets(pool, sizes, seed)?;
    curve_from_subsets(pool, test, sizes, &subsets, seed, &build)
}

fn curve_from_subsets<F>(
    pool: &[ExemplarRecord],
    test: &[ExemplarRecord],
    sizes: &[usize],
    subsets: &[Vec<String>],
    seed: u64,
    build: &F,
) -> Result<Vec<CurvePoint>>
where
    F: Fn(Vec<ExemplarRecord>) -> Result<ExemplarIndex> + Sync,
{
    if test.is_empty() {
        return Err(Error::EmptyInput("learning curve needs a test set"));
    }
    let by_id: HashMap<&str, &ExemplarRecord> = pool.iter().map(|r| (r.id.as_str(), r)).collect();
    let pool_ids: HashSet<&str> = by_id.keys().copied().collect();
    if let Some(t) = test.iter().find(|t| pool_ids.contains(t.id.as_str())) {
        return Err(Error::Consistency(format!(
            "test record {:?} also appears in the learning pool",
            t.id
        )));
    }
    let model_id = pool
        .first()
        .map(|r| r.embedding.model_id().to_string())
        .unwrap_or_default();
    sizes
        .par_iter()
        .zip(subsets)
        .map(|(&n, ids)| {
            let records = ids
                .iter()
                .map(|id| {
                    by_id.get(id.as_str()).map(|r| (*r).clone()).ok_or_else(|| {
                        Error::Consistency(format!("no embedding for {id:?} under {model_id}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let index = build(records)?;
            Ok(CurvePoint {
                n_per_class: n,
                metrics: evaluate_binary(test, &index)?,
                seed,
                model_id: model_id.clone(),
            })
        })
        .collect()
}

/// Embedded copies of one dataset under a single encoder.
#[derive(Debug, Clone)]
pub struct ModelPool {
    pub model_id: String,
    pub pool: Vec<ExemplarRecord>,
    pub test: Vec<ExemplarRecord>,
}

/// One learning curve per model over identical image-id subsets. Subsets
/// are drawn from the first model's pool; every other model must carry the
/// same ids in both pool and test.
pub fn model_comparison(
    models: &[ModelPool],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let reference = models
        .first()
        .ok_or(Error::EmptyInput("model comparison needs at least one model"))?;
    let subsets = nested_subsets(&reference.pool, sizes, seed)?;
    let ids = |records: &[ExemplarRecord]| -> HashSet<String> {
        records.iter().map(|r| r.id.clone()).collect()
    };
    let test_ids = ids(&reference.test);
    let mut out = Vec::with_capacity(models.len() * sizes.len());
    for m in models {
        if let Some(r) = m.pool.iter().chain(&m.test).find(|r| r.embedding.model_id() != m.model_id) {
            return Err(Error::Consistency(format!(
                "record {:?} is embedded with {:?}, expected {:?}",
                r.id,
                r.embedding.model_id(),
                m.model_id
            )));
        }
        if ids(&m.test) != test_ids {
            return Err(Error::Consistency(format!(
                "test set for {} does not cover the same ids as {}",
                m.model_id, reference.model_id
            )));
        }
        out.extend(curve_from_subsets(
            &m.pool,
            &m.test,
            sizes,
            &subsets,
            seed,
            &|r| ExemplarIndex::from_records(r),
        )?);
    }
    Ok(out)
}

pub const CURVE_HEADER: &str = "n_per_class,accuracy,sensitivity,specificity,precision,f1,auc,seed,model_id";

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for p in points {
        let m = &p.metrics;
        let auc = m.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            p.n_per_class,
            m.accuracy,
            m.sensitivity,
            m.specificity,
            m.precision,
            m.f1,
            auc,
            p.seed,
            p.model_id
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedding;

    fn pool(nominal: usize, defects: &[(&str, usize)]) -> Vec<ExemplarRecord> {
        let mut out = Vec::new();
        let mut k = 0;
        let mut push = |label: &str, count: usize, out: &mut Vec<ExemplarRecord>| {
            for _ in 0..count {
                let t = k as f64;
                let v = if label == "nominal" {
                    vec![1.0, 0.1 * (t * 0.7).sin(), 0.05 * t.cos()]
                } else {
                    vec![0.1 * t.sin(), 1.0, 0.05 * (t * 1.3).cos()]
                };
                out.push(
                    ExemplarRecord::new(
                        format!("img_{k:04}.png"),
                        label,
                        Embedding::new("toy", v).unwrap(),
                    )
                    .unwrap(),
                );
                k += 1;
            }
        };
        push("nominal", nominal, &mut out);
        for (label, count) in defects {
            push(label, *count, &mut out);
        }
        out
    }

    fn count(records: &[ExemplarRecord], label: &str) -> usize {
        records.iter().filter(|r| r.label == label).count()
    }

    #[test]
    fn balanced_split() {
        let records = pool(100, &[("defective", 100)]);
        let plan = SplitPlan {
            strategy: SplitStrategy::BalancedRandom,
            n_per_class: 10,
            seed: 1,
        };
        let s = make_split(&records, &plan).unwrap();
        assert_eq!(count(&s.learning, "nominal"), 10);
        assert_eq!(count(&s.learning, "defective"), 10);
        assert_eq!(s.test.len(), 180);
        let learn: HashSet<_> = s.learning.iter().map(|r| &r.id).collect();
        assert!(s.test.iter().all(|r| !learn.contains(&r.id)));
        assert_eq!(make_split(&records, &plan).unwrap(), s);
    }

    #[test]
    fn chronological_split() {
        let records = pool(100, &[("defective", 100)]);
        let plan = SplitPlan {
            strategy: SplitStrategy::Chronological,
            n_per_class: 50,
            seed: 0,
        };
        let s = make_split(&records, &plan).unwrap();
        let nominal_learn: Vec<_> = s.learning.iter().filter(|r| r.label == "nominal").collect();
        assert_eq!(nominal_learn.first().unwrap().id, "img_0000.png");
        assert_eq!(nominal_learn.last().unwrap().id, "img_0049.png");
        let defect_test: Vec<_> = s.test.iter().filter(|r| r.label == "defective").collect();
        assert_eq!(defect_test.first().unwrap().id, "img_0150.png");
        assert_eq!(defect_test.last().unwrap().id, "img_0199.png");
    }

    #[test]
    fn insufficient_data_names_class() {
        let records = pool(5, &[("defective", 50)]);
        let plan = SplitPlan {
            strategy: SplitStrategy::BalancedRandom,
            n_per_class: 10,
            seed: 0,
        };
        match make_split(&records, &plan) {
            Err(Error::InsufficientData { class, .. }) => assert_eq!(class, "nominal"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn odd_sizes_favor_first_subtype() {
        let records = pool(20, &[("local", 10), ("global", 10)]);
        let plan = SplitPlan {
            strategy: SplitStrategy::BalancedRandom,
            n_per_class: 7,
            seed: 3,
        };
        let s = make_split(&records, &plan).unwrap();
        assert_eq!(count(&s.learning, "local"), 4);
        assert_eq!(count(&s.learning, "global"), 3);
    }

    #[test]
    fn subsets_are_nested() {
        let records = pool(60, &[("local", 30), ("global", 30)]);
        let sizes = [5, 11, 20, 33, 60];
        let subsets = nested_subsets(&records, &sizes, 9).unwrap();
        for w in subsets.windows(2) {
            let big: HashSet<_> = w[1].iter().collect();
            assert!(w[0].iter().all(|id| big.contains(id)));
        }
        assert_eq!(subsets[4].len(), 120);
        assert!(nested_subsets(&records, &[10, 5], 0).is_err());
        assert!(nested_subsets(&records, &[61], 0).is_err());
    }

    #[test]
    fn curve_points_and_determinism() {
        let all = pool(60, &[("defective", 60)]);
        let split = make_split(
            &all,
            &SplitPlan {
                strategy: SplitStrategy::BalancedRandom,
                n_per_class: 40,
                seed: 4,
            },
        )
        .unwrap();
        let sizes = [10, 20, 40];
        let a = learning_curve(&split.learning, &split.test, &sizes, 4).unwrap();
        let b = learning_curve(&split.learning, &split.test, &sizes, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|p| p.n_per_class).collect::<Vec<_>>(), sizes);
        assert_eq!(a[2].metrics.accuracy, 1.0);
        let mut buf = Vec::new();
        write_curve_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(CURVE_HEADER));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn comparison_with_identical_embeddings() {
        let all = pool(40, &[("defective", 40)]);
        let split = make_split(
            &all,
            &SplitPlan {
                strategy: SplitStrategy::BalancedRandom,
                n_per_class: 20,
                seed: 2,
            },
        )
        .unwrap();
        let relabel = |records: &[ExemplarRecord], model: &str| -> Vec<ExemplarRecord> {
            records
                .iter()
                .map(|r| ExemplarRecord {
                    embedding: Embedding::new(model, r.embedding.values().to_vec()).unwrap(),
                    ..r.clone()
                })
                .collect()
        };
        let models = vec![
            ModelPool {
                model_id: "toy".into(),
                pool: split.learning.clone(),
                test: split.test.clone(),
            },
            ModelPool {
                model_id: "toy-copy".into(),
                pool: relabel(&split.learning, "toy-copy"),
                test: relabel(&split.test, "toy-copy"),
            },
        ];
        let points = model_comparison(&models, &[5, 10], 2).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[0].metrics, points[2].metrics);
        assert_eq!(points[1].metrics, points[3].metrics);
        assert_eq!(points[2].model_id, "toy-copy");

        let mut broken = models.clone();
        broken[1].pool.pop();
        let last_id = models[1].pool.last().unwrap().id.clone();
        let sizes = [20];
        match model_comparison(&broken, &sizes, 2) {
            Err(Error::Consistency(msg)) => assert!(msg.contains(&last_id) || msg.contains("no embedding")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
