//! Hungarian matching of predicted clusters to ground-truth classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub accuracy: f64,
    pub miou: f64,
    /// `assignment[p]` is the class matched to predicted cluster `p`.
    pub assignment: Vec<u32>,
    /// IoU per ground-truth class; `None` when the class is absent from
    /// both prediction and truth.
    pub per_class_iou: Vec<Option<f64>>,
}

/// `classes x classes` counts, indexed `[truth][pred]`.
pub fn contingency(pred: &[u32], truth: &[u32], classes: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut table = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p as usize >= classes || t as usize >= classes {
            return Err(Error::DimensionMismatch(format!(
                "label {} outside {classes} classes",
                p.max(t)
            )));
        }
        table[t as usize][p as usize] += 1;
    }
    Ok(table)
}

/// Maximum-weight perfect matching on a square table: returns `col_of_row`.
///
/// Shortest augmenting paths with potentials, O(n^3). Costs are negated
/// weights so the minimizer maximizes total overlap.
pub fn max_weight_assignment(weights: &[Vec<u64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -(weights[i][j] as i128);
    // 1-based internals: row 0 / column 0 are sentinels.
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i128::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = i128::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}

/// Matches predicted cluster ids to classes so that total overlap is
/// maximal, then reports pixel accuracy and mean IoU.
pub fn hungarian_match(pred: &[u32], truth: &[u32], classes: usize) -> Result<ClusterReport> {
    let table = contingency(pred, truth, classes)?;
    let pred_of_truth = max_weight_assignment(&table);
    report_from_matching(&table, &pred_of_truth, pred.len())
}

pub(crate) fn report_from_matching(table: &[Vec<u64>], pred_of_truth: &[usize], total: usize) -> Result<ClusterReport> {
    let classes = table.len();
    let truth_count: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let pred_count: Vec<u64> = (0..classes).map(|p| table.iter().map(|r| r[p]).sum()).collect();
    let mut correct = 0u64;
    let mut assignment = vec![0u32; classes];
    let mut per_class_iou = Vec::with_capacity(classes);
    for (t, &p) in pred_of_truth.iter().enumerate() {
        assignment[p] = t as u32;
        let inter = table[t][p];
        correct += inter;
        let union = truth_count[t] + pred_count[p] - inter;
        per_class_iou.push((union > 0).then(|| inter as f64 / union as f64));
    }
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    Ok(ClusterReport {
        accuracy,
        miou,
        assignment,
        per_class_iou,
    })
}
