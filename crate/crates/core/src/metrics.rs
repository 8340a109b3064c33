//! Linear assignment and clustering scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NcdError, Result};
use crate::model::{argmax, ModelParams};
use crate::synth_data::{DatasetSplit, LabelledSample, Subset};

/// Minimum-cost perfect matching. `permutation[row] = column`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Hungarian algorithm with row/column potentials, `O(n³)`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<AssignmentResult> {
    let n = cost.len();
    if cost.iter().any(|row| row.len() != n) {
        return shape_err("cost matrix must be square");
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(NcdError::Input("cost matrix must be finite".into()));
    }
    if n == 0 {
        return Ok(AssignmentResult { permutation: Vec::new(), total_cost: 0.0 });
    }
    // 1-based arrays; column 0 is a virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[owner[j] - 1] = j - 1;
    }
    let total_cost = permutation.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(AssignmentResult { permutation, total_cost })
}

fn check_labels(y: &[usize], y_hat: &[usize]) -> Result<()> {
    if y.len() != y_hat.len() {
        return shape_err(format!("{} labels vs {} predictions", y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(NcdError::Usage("cannot score an empty labelling".into()));
    }
    Ok(())
}

/// Best accuracy over cluster relabelings, with the predicted → true mapping.
pub fn clustering_accuracy_with_mapping(y: &[usize], y_hat: &[usize]) -> Result<(f64, BTreeMap<usize, usize>)> {
    check_labels(y, y_hat)?;
    let classes: Vec<usize> = distinct(y);
    let clusters: Vec<usize> = distinct(y_hat);
    let dim = classes.len().max(clusters.len());
    let mut counts = vec![vec![0.0; dim]; dim];
    for (t, p) in y.iter().zip(y_hat) {
        let r = clusters.binary_search(p).expect("cluster present");
        let c = classes.binary_search(t).expect("class present");
        counts[r][c] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
    let assignment = hungarian(&cost)?;
    let mut mapping = BTreeMap::new();
    let mut hits = 0.0;
    for (r, &c) in assignment.permutation.iter().enumerate() {
        hits += counts[r][c];
        if r < clusters.len() && c < classes.len() {
            mapping.insert(clusters[r], classes[c]);
        }
    }
    Ok((hits / y.len() as f64, mapping))
}

pub fn clustering_accuracy(y: &[usize], y_hat: &[usize]) -> Result<f64> {
    Ok(clustering_accuracy_with_mapping(y, y_hat)?.0)
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

struct Contingency {
    table: BTreeMap<(usize, usize), f64>,
    rows: BTreeMap<usize, f64>,
    cols: BTreeMap<usize, f64>,
    n: f64,
}

fn contingency(y: &[usize], y_hat: &[usize]) -> Contingency {
    let mut c = Contingency { table: BTreeMap::new(), rows: BTreeMap::new(), cols: BTreeMap::new(), n: y.len() as f64 };
    for (&a, &b) in y.iter().zip(y_hat) {
        *c.table.entry((a, b)).or_default() += 1.0;
        *c.rows.entry(a).or_default() += 1.0;
        *c.cols.entry(b).or_default() += 1.0;
    }
    c
}

fn entropy(counts: &BTreeMap<usize, f64>, n: f64) -> f64 {
    counts.values().map(|&c| -(c / n) * (c / n).ln()).sum()
}

/// How mutual information is scaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    /// `(H(y) + H(ŷ)) / 2`.
    #[default]
    Arithmetic,
    /// `sqrt(H(y)·H(ŷ))`.
    Geometric,
}

/// Mutual information normalised by the arithmetic mean of the entropies.
pub fn nmi(y: &[usize], y_hat: &[usize]) -> Result<f64> {
    nmi_with(y, y_hat, NmiNorm::Arithmetic)
}

pub fn nmi_with(y: &[usize], y_hat: &[usize], norm: NmiNorm) -> Result<f64> {
    check_labels(y, y_hat)?;
    let c = contingency(y, y_hat);
    let (hy, hp) = (entropy(&c.rows, c.n), entropy(&c.cols, c.n));
    if hy == 0.0 && hp == 0.0 {
        return Ok(1.0);
    }
    if hy == 0.0 || hp == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = c
        .table
        .iter()
        .map(|(&(a, b), &nij)| {
            let (ai, bj) = (c.rows[&a], c.cols[&b]);
            (nij / c.n) * (c.n * nij / (ai * bj)).ln()
        })
        .sum();
    let scale = match norm {
        NmiNorm::Arithmetic => 0.5 * (hy + hp),
        NmiNorm::Geometric => (hy * hp).sqrt(),
    };
    Ok((mi / scale).clamp(0.0, 1.0))
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index under the permutation model.
pub fn ari(y: &[usize], y_hat: &[usize]) -> Result<f64> {
    check_labels(y, y_hat)?;
    let c = contingency(y, y_hat);
    let index: f64 = c.table.values().map(|&v| choose2(v)).sum();
    let a: f64 = c.rows.values().map(|&v| choose2(v)).sum();
    let b: f64 = c.cols.values().map(|&v| choose2(v)).sum();
    let pairs = choose2(c.n);
    // scaled by the pair count so integer-valued inputs stay exact
    let denom = 0.5 * (a + b) * pairs - a * b;
    if denom == 0.0 {
        // only reachable when both partitions coincide (all singletons or one block)
        return Ok(1.0);
    }
    Ok((index * pairs - a * b) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    TaskAware,
    TaskAgnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSubset {
    Labelled,
    Unlabelled,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub subset: EvalSubset,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub n_samples: usize,
    /// `[predicted, true]` pairs of the optimal matching.
    pub permutation: Vec<[usize; 2]>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

fn pairs(mapping: BTreeMap<usize, usize>) -> Vec<[usize; 2]> {
    mapping.into_iter().map(|(p, t)| [p, t]).collect()
}

/// Clustering report for predictions of the unlabelled head.
pub fn clustering_report(protocol: Protocol, subset: EvalSubset, y: &[usize], y_hat: &[usize]) -> Result<MetricsReport> {
    let (acc, mapping) = clustering_accuracy_with_mapping(y, y_hat)?;
    Ok(MetricsReport {
        protocol,
        subset,
        acc,
        nmi: nmi(y, y_hat)?,
        ari: ari(y, y_hat)?,
        n_samples: y.len(),
        permutation: pairs(mapping),
    })
}

/// Task-agnostic reports from full-output argmax predictions.
///
/// Labelled predictions must hit the true class index exactly. Unlabelled
/// predictions in the `g` block are shifted down by `c_l`; predictions in the
/// `h` block become extra clusters `c_u + k`. The "all" accuracy is the
/// sample-weighted mean of the two subset accuracies.
pub fn task_agnostic_reports(
    labelled_truth: &[usize],
    labelled_pred: &[usize],
    unlabelled_truth: &[usize],
    unlabelled_pred: &[usize],
    c_l: usize,
    c_u: usize,
) -> Result<Vec<MetricsReport>> {
    check_labels(labelled_truth, labelled_pred)?;
    check_labels(unlabelled_truth, unlabelled_pred)?;
    let hits = labelled_truth.iter().zip(labelled_pred).filter(|(t, p)| t == p).count();
    let acc_l = hits as f64 / labelled_truth.len() as f64;
    let labelled = MetricsReport {
        protocol: Protocol::TaskAgnostic,
        subset: EvalSubset::Labelled,
        acc: acc_l,
        nmi: nmi(labelled_truth, labelled_pred)?,
        ari: ari(labelled_truth, labelled_pred)?,
        n_samples: labelled_truth.len(),
        permutation: (0..c_l).map(|k| [k, k]).collect(),
    };
    let shifted: Vec<usize> = unlabelled_pred.iter().map(|&k| if k >= c_l { k - c_l } else { c_u + k }).collect();
    let unlabelled = clustering_report(Protocol::TaskAgnostic, EvalSubset::Unlabelled, unlabelled_truth, &shifted)?;

    let (n_l, n_u) = (labelled_truth.len() as f64, unlabelled_truth.len() as f64);
    let all_truth: Vec<usize> = labelled_truth.iter().copied().chain(unlabelled_truth.iter().map(|t| t + c_l)).collect();
    let all_pred: Vec<usize> = labelled_pred.iter().chain(unlabelled_pred).copied().collect();
    let all = MetricsReport {
        protocol: Protocol::TaskAgnostic,
        subset: EvalSubset::All,
        acc: (n_l * acc_l + n_u * unlabelled.acc) / (n_l + n_u),
        nmi: nmi(&all_truth, &all_pred)?,
        ari: ari(&all_truth, &all_pred)?,
        n_samples: all_truth.len(),
        permutation: Vec::new(),
    };
    Ok(vec![labelled, unlabelled, all])
}

fn features<T>(pool: &[T], f: impl Fn(&T) -> &Vec<f64>) -> Vec<Vec<f64>> {
    pool.iter().map(|s| f(s).clone()).collect()
}

/// Head-`g` argmax on the unlabelled training pool.
pub fn evaluate_task_aware(params: &ModelParams, split: &DatasetSplit, tau: f64) -> Result<MetricsReport> {
    if split.unlabelled_train.is_empty() {
        return Err(NcdError::Usage("task-aware evaluation needs unlabelled training samples".into()));
    }
    let xs = features(&split.unlabelled_train, |s| &s.features);
    let preds: Vec<usize> = params.forward_batch(&xs, tau)?.iter().map(|o| argmax(&o.p_g)).collect();
    let truth = split.unlabelled_truth(Subset::Train);
    clustering_report(Protocol::TaskAware, EvalSubset::Unlabelled, &truth, &preds)
}

/// Head-`h` argmax on a labelled pool. Needs no hidden labels, so training
/// code may call it.
pub fn evaluate_labelled(params: &ModelParams, pool: &[LabelledSample], tau: f64) -> Result<MetricsReport> {
    if pool.is_empty() {
        return Err(NcdError::Usage("labelled evaluation needs samples".into()));
    }
    let xs = features(pool, |s| &s.features);
    let preds: Vec<usize> = params.forward_batch(&xs, tau)?.iter().map(|o| argmax(&o.p_h)).collect();
    let truth: Vec<usize> = pool.iter().map(|s| s.class).collect();
    let hits = truth.iter().zip(&preds).filter(|(t, p)| t == p).count();
    Ok(MetricsReport {
        protocol: Protocol::TaskAware,
        subset: EvalSubset::Labelled,
        acc: hits as f64 / truth.len() as f64,
        nmi: nmi(&truth, &preds)?,
        ari: ari(&truth, &preds)?,
        n_samples: truth.len(),
        permutation: (0..params.dims.c_l).map(|k| [k, k]).collect(),
    })
}

/// Full-output argmax on the labelled and unlabelled test pools.
pub fn evaluate_task_agnostic(params: &ModelParams, split: &DatasetSplit, tau: f64) -> Result<Vec<MetricsReport>> {
    if split.labelled_test.is_empty() || split.unlabelled_test.is_empty() {
        return Err(NcdError::Usage("task-agnostic evaluation needs labelled and unlabelled test samples".into()));
    }
    let predict = |xs: Vec<Vec<f64>>| -> Result<Vec<usize>> {
        Ok(params.forward_batch(&xs, tau)?.iter().map(|o| argmax(&o.p)).collect())
    };
    let lab_pred = predict(features(&split.labelled_test, |s| &s.features))?;
    let unl_pred = predict(features(&split.unlabelled_test, |s| &s.features))?;
    let lab_truth: Vec<usize> = split.labelled_test.iter().map(|s| s.class).collect();
    let unl_truth = split.unlabelled_truth(Subset::Test);
    task_agnostic_reports(&lab_truth, &lab_pred, &unl_truth, &unl_pred, split.c_l, split.c_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn hungarian_examples() {
        let r = hungarian(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!((r.permutation, r.total_cost), (vec![0, 1], 0.0));
        let cost = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let r = hungarian(&cost).unwrap();
        assert_eq!((r.permutation.clone(), r.total_cost), (vec![0, 1], 2.0));
        assert_eq!(r.total_cost, brute_force_min(&cost));
        assert!(matches!(hungarian(&[vec![1.0, 2.0]]), Err(NcdError::Shape(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[0, 1, 0, 1], &[0, 0, 0, 0]).unwrap(), 0.5);
        assert_eq!(clustering_accuracy(&[2, 0, 1], &[2, 0, 1]).unwrap(), 1.0);
        assert!(matches!(clustering_accuracy(&[], &[]), Err(NcdError::Usage(_))));
        assert!(matches!(clustering_accuracy(&[0], &[0, 1]), Err(NcdError::Shape(_))));
        let (_, mapping) = clustering_accuracy_with_mapping(&[0, 0, 1, 1], &[5, 5, 3, 3]).unwrap();
        assert_eq!(mapping.get(&5), Some(&0));
        assert_eq!(mapping.get(&3), Some(&1));
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 1, 1], &[3, 3, 3, 3]).unwrap(), 0.0);
        assert_eq!(nmi(&[1, 1, 1], &[0, 0, 0]).unwrap(), 1.0);
        // contingency [[1,1],[0,2]]: H(y)=ln2, H(ŷ)=−(¼ln¼+¾ln¾), I = H(ŷ) − ½ln2
        let hp = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let i = hp - 0.5 * 2f64.ln();
        let v = nmi(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((v - 2.0 * i / (2f64.ln() + hp)).abs() < 1e-12);
        assert!((v - 0.3437).abs() < 1e-4);
        let g = nmi_with(&[0, 0, 1, 1], &[0, 1, 1, 1], NmiNorm::Geometric).unwrap();
        assert!((g - i / (2f64.ln() * hp).sqrt()).abs() < 1e-12);
        assert!(g >= v);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 2], &[0, 0, 1, 2]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5);
        assert_eq!(ari(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[4], &[7]).unwrap(), 1.0);
    }

    #[test]
    fn agnostic_counts_cross_block_predictions_as_wrong() {
        // labelled sample 1 predicted into the g block (index 3)
        let reports = task_agnostic_reports(&[0, 1, 2, 1], &[0, 3, 2, 1], &[0, 1], &[3, 4], 3, 2).unwrap();
        assert_eq!(reports[0].acc, 0.75);
        assert_eq!(reports[1].acc, 1.0);
        assert!((reports[2].acc - (4.0 * 0.75 + 2.0 * 1.0) / 6.0).abs() < 1e-15);
        let perfect = task_agnostic_reports(&[0, 1], &[0, 1], &[0, 1], &[3, 2], 2, 2).unwrap();
        assert!(perfect.iter().all(|r| r.acc == 1.0));
        assert_eq!(perfect[2].subset, EvalSubset::All);
    }

    #[test]
    fn report_json_keys() {
        let r = clustering_report(Protocol::TaskAware, EvalSubset::Unlabelled, &[0, 1], &[1, 0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["protocol", "subset", "acc", "nmi", "ari", "n_samples", "permutation"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["protocol"], "task-aware");
        assert_eq!(v["subset"], "unlabelled");
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(n in 1usize..=6, seed in prop::collection::vec(0u32..50, 36)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| seed[i * 6 + j] as f64).collect()).collect();
            let r = hungarian(&cost).unwrap();
            prop_assert_eq!(r.total_cost, brute_force_min(&cost));
            let mut cols = r.permutation.clone();
            cols.sort_unstable();
            prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn relabeling_invariance(y in prop::collection::vec(0usize..4, 1..40), shift in 1usize..4) {
            let relabeled: Vec<usize> = y.iter().map(|v| (v + shift) % 4 + 10).collect();
            prop_assert_eq!(clustering_accuracy(&y, &relabeled).unwrap(), 1.0);
            prop_assert!((nmi(&y, &relabeled).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((ari(&y, &relabeled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nmi_and_ari_are_symmetric(pairs in prop::collection::vec((0usize..4, 0usize..3), 2..40)) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            prop_assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((ari(&a, &b).unwrap() - ari(&b, &a).unwrap()).abs() < 1e-12);
            let v = nmi(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let r = ari(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }
}
