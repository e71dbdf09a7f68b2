//! Clustering quality: ACC, NMI, ARI and precision/recall/F-score.
//!
//! Label ids are arbitrary; every metric depends only on the partitions.

mod hungarian;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use hungarian::hungarian;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Co-occurrence counts of predicted clusters (rows) and true classes
/// (columns), with clusters and classes ordered by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

/// Dense indices of `labels`, numbered by ascending id.
fn dense_ids<T: Ord>(labels: &[T]) -> (Vec<usize>, usize) {
    let distinct: BTreeSet<&T> = labels.iter().collect();
    let order: BTreeMap<&T, usize> = distinct.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    (labels.iter().map(|l| order[l]).collect(), order.len())
}

impl ContingencyTable {
    pub fn new<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::invalid(format!(
                "label vectors differ in length: {} predicted, {} true",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::invalid("label vectors are empty"));
        }
        let (p, rows) = dense_ids(pred);
        let (t, cols) = dense_ids(truth);
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&i, &j) in p.iter().zip(&t) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: pred.len() as u64,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.col_sums.len()
    }

    /// Optimal cluster-to-class map maximizing matched samples. Entry `i`
    /// is the class of cluster `i`, or `None` when the cluster is left
    /// unmatched because there are more clusters than classes.
    ///
    /// Among maps matching equally many samples, the one with the highest
    /// support-weighted F1 wins, so the choice does not depend on label
    /// ids. That F1 is a sum of per-pair terms below 1 in total, and is
    /// scaled by 1/2 to stay under the unit gap between match counts.
    pub fn best_map(&self) -> (Vec<Option<usize>>, u64) {
        let (r, c) = (self.num_clusters(), self.num_classes());
        let size = r.max(c);
        let n = self.total as f64;
        // Zero padding to square leaves the optimum unchanged.
        let cost = Matrix::from_fn(size, size, |i, j| {
            if i < r && j < c {
                let hits = self.counts[i][j] as f64;
                let (a, b) = (self.row_sums[i] as f64, self.col_sums[j] as f64);
                let f1 = (b / n) * 2.0 * hits / (a + b);
                -(hits + 0.5 * f1)
            } else {
                0.0
            }
        });
        let (assignment, _) = hungarian(&cost).expect("square finite cost");
        let map: Vec<Option<usize>> = (0..r).map(|i| Some(assignment[i]).filter(|&j| j < c)).collect();
        let matched = map
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| self.counts[i][j]))
            .sum();
        (map, matched)
    }
}

/// Best-map clustering accuracy.
pub fn accuracy<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    Ok(t.best_map().1 as f64 / t.total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    /// `sqrt(H(pred) H(truth))`.
    #[default]
    Geometric,
    /// `(H(pred) + H(truth)) / 2`.
    Arithmetic,
}

fn entropy(marginals: &[u64], n: f64) -> f64 {
    marginals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.total as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

pub fn nmi<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> Result<f64> {
    nmi_with(pred, truth, NmiNorm::Geometric)
}

/// Normalized mutual information (natural logs). Two single-cluster
/// partitions score 1; a single cluster against a nontrivial partition
/// scores 0.
pub fn nmi_with<A: Ord, B: Ord>(pred: &[A], truth: &[B], norm: NmiNorm) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    let n = t.total as f64;
    let (hp, ht) = (entropy(&t.row_sums, n), entropy(&t.col_sums, n));
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let denom = match norm {
        NmiNorm::Geometric => (hp * ht).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (hp + ht),
    };
    Ok((mutual_information(&t) / denom).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index. When the chance-corrected denominator vanishes
/// (both partitions trivial in the same way) the result is 1.
pub fn ari<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    if t.total < 2 {
        return Err(Error::invalid("ARI needs at least two samples"));
    }
    let index: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_a: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let sum_b: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = sum_a * sum_b / pairs(t.total);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Support-weighted precision, recall and F1 after mapping clusters to
/// classes with the accuracy map. Samples of unmatched clusters count as
/// misclassified.
pub fn precision_recall_f<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> Result<PrecisionRecall> {
    let t = ContingencyTable::new(pred, truth)?;
    let (map, _) = t.best_map();
    let n = t.total as f64;
    let mut out = PrecisionRecall {
        precision: 0.0,
        recall: 0.0,
        fscore: 0.0,
    };
    for j in 0..t.num_classes() {
        let support = t.col_sums[j] as f64;
        let (tp, predicted) = match map.iter().position(|&m| m == Some(j)) {
            Some(i) => (t.counts[i][j] as f64, t.row_sums[i] as f64),
            None => (0.0, 0.0),
        };
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = tp / support;
        let w = support / n;
        out.precision += w * p;
        out.recall += w * r;
        out.fscore += w * f1(p, r);
    }
    Ok(out)
}

/// Pair-counting precision, recall and F: a pair of samples is a positive
/// when both share a predicted cluster. With no positive pairs on a side,
/// the corresponding ratio is taken as 1.
pub fn pairwise_precision_recall_f<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> Result<PrecisionRecall> {
    let t = ContingencyTable::new(pred, truth)?;
    let tp: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let pred_pairs: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let true_pairs: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let precision = if pred_pairs > 0.0 { tp / pred_pairs } else { 1.0 };
    let recall = if true_pairs > 0.0 { tp / true_pairs } else { 1.0 };
    Ok(PrecisionRecall {
        precision,
        recall,
        fscore: f1(precision, recall),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    pub nmi_norm: NmiNorm,
    pub pairwise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl Metrics {
    pub fn compute<A: Ord, B: Ord>(pred: &[A], truth: &[B], opts: &MetricOptions) -> Result<Self> {
        let pr = if opts.pairwise {
            pairwise_precision_recall_f(pred, truth)?
        } else {
            precision_recall_f(pred, truth)?
        };
        Ok(Self {
            acc: accuracy(pred, truth)?,
            nmi: nmi_with(pred, truth, opts.nmi_norm)?,
            ari: ari(pred, truth)?,
            precision: pr.precision,
            recall: pr.recall,
            fscore: pr.fscore,
        })
    }

    /// `(name, value)` in reporting order.
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("acc", self.acc),
            ("nmi", self.nmi),
            ("ari", self.ari),
            ("precision", self.precision),
            ("recall", self.recall),
            ("fscore", self.fscore),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;
    use proptest::prelude::*;

    /// Best accuracy over every map from clusters to classes.
    fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
        let kp = pred.iter().max().unwrap() + 1;
        let kt = truth.iter().max().unwrap() + 1;
        let slots = kt.max(kp);
        let mut map = vec![0usize; kp];
        let mut best = 0;
        // Enumerate injections cluster -> slot; slots >= kt are "no class".
        fn rec(i: usize, map: &mut Vec<usize>, used: &mut Vec<bool>, pred: &[usize], truth: &[usize], kt: usize, best: &mut usize) {
            if i == map.len() {
                let hits = pred.iter().zip(truth).filter(|(&p, &t)| map[p] == t && t < kt).count();
                *best = (*best).max(hits);
                return;
            }
            for s in 0..used.len() {
                if !used[s] {
                    used[s] = true;
                    map[i] = s;
                    rec(i + 1, map, used, pred, truth, kt, best);
                    used[s] = false;
                }
            }
        }
        rec(0, &mut map, &mut vec![false; slots], pred, truth, kt, &mut best);
        best as f64 / pred.len() as f64
    }

    fn random_labels(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|_| rng.below(k)).collect()
    }

    #[test]
    fn worked_example() {
        let (pred, truth) = ([0, 0, 1, 1], [0, 1, 1, 1]);
        assert_eq!(accuracy(&pred, &truth).unwrap(), 0.75);
        let pr = precision_recall_f(&pred, &truth).unwrap();
        assert!((pr.precision - 0.875).abs() < 1e-15);
        assert!((pr.recall - 0.75).abs() < 1e-15);
        assert!((pr.fscore - (1.0 / 6.0 + 0.6)).abs() < 1e-15);
    }

    #[test]
    fn independent_partitions() {
        let (pred, truth) = ([0, 0, 1, 1], [0, 1, 0, 1]);
        assert!(nmi(&pred, &truth).unwrap().abs() < 1e-15);
        // Pairs: none shared, 2 within each side, 6 total.
        // (0 - 4/6) / (2 - 4/6) = -1/2.
        assert!((ari(&pred, &truth).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate() {
        let truth = [3, 3, 9, 9, -1];
        let m = Metrics::compute(&truth, &truth, &MetricOptions::default()).unwrap();
        assert!(m.entries().iter().all(|&(_, v)| v == 1.0), "{m:?}");
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[5, 5, 5], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[5, 5, 5], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0);
        assert!(ari(&[0], &[0]).is_err());
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn more_clusters_than_classes() {
        let pred = [0, 1, 2, 2];
        let truth = [0, 0, 1, 1];
        assert_eq!(accuracy(&pred, &truth).unwrap(), 0.75);
        let pr = precision_recall_f(&pred, &truth).unwrap();
        assert_eq!(pr.recall, 0.75);
    }

    #[test]
    fn pairwise_variant() {
        let (pred, truth) = ([0, 0, 1, 1], [0, 1, 1, 1]);
        // Predicted pairs {01, 23}; true pairs {12, 13, 23}; shared {23}.
        let pr = pairwise_precision_recall_f(&pred, &truth).unwrap();
        assert_eq!(pr.precision, 0.5);
        assert!((pr.recall - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_matches_brute_force() {
        let mut rng = SeededRng::new(1);
        for _ in 0..200 {
            let n = 1 + rng.below(30);
            let (kp, kt) = (1 + rng.below(6), 1 + rng.below(6));
            let pred = random_labels(&mut rng, n, kp);
            let truth = random_labels(&mut rng, n, kt);
            assert_eq!(accuracy(&pred, &truth).unwrap(), brute_force_accuracy(&pred, &truth));
            let pr = precision_recall_f(&pred, &truth).unwrap();
            assert!((pr.recall - accuracy(&pred, &truth).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_json_round_trip() {
        let m = Metrics::compute(&[0, 1, 1], &[1, 0, 0], &MetricOptions::default()).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Metrics>(&text).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn invariant_under_relabeling(seed in 0u64..10_000) {
            let mut rng = SeededRng::new(seed);
            let n = 2 + rng.below(40);
            let pred = random_labels(&mut rng, n, 5);
            let truth = random_labels(&mut rng, n, 4);
            let mut perm: Vec<i64> = (0..5).map(|x| 10 * x - 7).collect();
            rng.shuffle(&mut perm);
            let relabeled: Vec<i64> = pred.iter().map(|&p| perm[p]).collect();
            let truth_relabeled: Vec<i64> = truth.iter().map(|&t| 100 - t as i64).collect();
            let opts = MetricOptions::default();
            let a = Metrics::compute(&pred, &truth, &opts).unwrap();
            let b = Metrics::compute(&relabeled, &truth_relabeled, &opts).unwrap();
            for ((_, x), (_, y)) in a.entries().iter().zip(b.entries()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&truth, &pred).unwrap()).abs() < 1e-12);
            prop_assert_eq!(ari(&relabeled, &pred).unwrap(), 1.0);
        }
    }
}
