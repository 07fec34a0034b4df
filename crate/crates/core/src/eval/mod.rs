//! Trustworthiness of mined sets against ground-truth labels.
//!
//! Pair counts exclude the anchor itself: the self pair is always
//! same-label and would otherwise inflate strategies that keep the anchor in
//! its own positive set.

mod hungarian;

pub use hungarian::{contingency, hungarian_match, max_weight_assignment, ClusterReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureBatch;
use crate::result::{AnchorSets, MiningResult};
use crate::similarity::dot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorTrust {
    pub anchor: u32,
    pub label: u32,
    pub positives: usize,
    pub true_positives: usize,
    pub ambiguous: usize,
    pub negatives: usize,
    /// Same-label rows that ended up in the negative set.
    pub false_negatives: usize,
    /// `true_positives / positives`, absent when the anchor has no positive
    /// besides itself.
    pub precision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub anchors: usize,
    pub mean_positive_count: f64,
    /// Pooled over all (anchor, positive) pairs.
    pub tp_in_p_ratio: f64,
    /// Mean of per-anchor precisions over anchors that have one.
    pub anchor_mean_precision: f64,
    pub mean_ambiguous_count: f64,
    pub mean_negative_count: f64,
    /// Pooled over all (anchor, negative) pairs.
    pub fp_in_n_ratio: f64,
    pub per_anchor_rows: Vec<AnchorTrust>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Labels of the mined candidates. `labels` is indexed by original row when
/// the result carries a row map, by candidate otherwise.
pub fn candidate_labels(result: &MiningResult, labels: &[u32]) -> Result<Vec<u32>> {
    match &result.row_map {
        Some(map) => map
            .iter()
            .map(|&r| {
                labels.get(r as usize).copied().ok_or_else(|| {
                    Error::DimensionMismatch(format!("row map entry {r} outside {} labels", labels.len()))
                })
            })
            .collect(),
        None => {
            if labels.len() != result.candidates {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} candidates",
                    labels.len(),
                    result.candidates
                )));
            }
            Ok(labels.to_vec())
        }
    }
}

fn class_counts(labels: &[u32]) -> Vec<u64> {
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let mut counts = vec![0u64; classes];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}

fn anchor_trust(s: &AnchorSets, candidates: usize, labels: &[u32], counts: &[u64]) -> AnchorTrust {
    let i = s.anchor;
    let label = labels[i as usize];
    let tally = |set: &[u32]| {
        let mut size = 0usize;
        let mut same = 0usize;
        for &j in set.iter().filter(|&&j| j != i) {
            size += 1;
            if labels[j as usize] == label {
                same += 1;
            }
        }
        (size, same)
    };
    let (positives, true_positives) = tally(&s.positives);
    let (ambiguous, same_ambiguous) = tally(&s.ambiguous);
    let negatives = candidates - 1 - positives - ambiguous;
    let same_others = counts[label as usize] as usize - 1;
    AnchorTrust {
        anchor: i,
        label,
        positives,
        true_positives,
        ambiguous,
        negatives,
        false_negatives: same_others - true_positives - same_ambiguous,
        precision: (positives > 0).then(|| true_positives as f64 / positives as f64),
    }
}

fn aggregate(rows: Vec<AnchorTrust>) -> TrustReport {
    let m = rows.len();
    let sum = |f: fn(&AnchorTrust) -> usize| rows.iter().map(|r| f(r) as u64).sum::<u64>();
    let (np, tp) = (sum(|r| r.positives), sum(|r| r.true_positives));
    let (nn, fneg) = (sum(|r| r.negatives), sum(|r| r.false_negatives));
    let na = sum(|r| r.ambiguous);
    let precisions: Vec<f64> = rows.iter().filter_map(|r| r.precision).collect();
    let mean = |x: u64| if m == 0 { 0.0 } else { x as f64 / m as f64 };
    TrustReport {
        anchors: m,
        mean_positive_count: mean(np),
        tp_in_p_ratio: ratio(tp, np),
        anchor_mean_precision: if precisions.is_empty() {
            0.0
        } else {
            precisions.iter().sum::<f64>() / precisions.len() as f64
        },
        mean_ambiguous_count: mean(na),
        mean_negative_count: mean(nn),
        fp_in_n_ratio: ratio(fneg, nn),
        per_anchor_rows: rows,
    }
}

fn trust_rows(result: &MiningResult, labels: &[u32]) -> Result<Vec<AnchorTrust>> {
    if labels.len() != result.candidates {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} candidates",
            labels.len(),
            result.candidates
        )));
    }
    let counts = class_counts(labels);
    Ok(result
        .anchors
        .iter()
        .map(|s| anchor_trust(s, result.candidates, labels, &counts))
        .collect())
}

/// Positive precision and negative contamination of a mining result.
/// `labels` holds one label per candidate (see [`candidate_labels`]).
pub fn trust_report(result: &MiningResult, labels: Option<&[u32]>) -> Result<TrustReport> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    Ok(aggregate(trust_rows(result, labels)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub quantile_grid: Vec<f64>,
    pub anchors_in_range: Vec<usize>,
    pub cumulative_mean_count: Vec<f64>,
    /// Pooled precision over the positives of the anchors in `[0, q]%`.
    pub cumulative_precision: Vec<f64>,
}

pub fn default_quantile_grid() -> Vec<f64> {
    (1..=10).map(|k| 10.0 * k as f64).collect()
}

/// Anchors sorted ascending by positive count; for each `q` the mean count
/// and precision over the first `ceil(q% * anchors)` of them.
pub fn curve_report(result: &MiningResult, labels: Option<&[u32]>, quantile_grid: &[f64]) -> Result<CurveReport> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    if quantile_grid.is_empty()
        || quantile_grid.iter().any(|&q| !(q > 0.0 && q <= 100.0))
        || quantile_grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidConfig(
            "quantile grid must be strictly increasing within (0, 100]".into(),
        ));
    }
    let mut rows = trust_rows(result, labels)?;
    rows.sort_by_key(|r| (r.positives, r.anchor));
    let m = rows.len();
    let mut report = CurveReport {
        quantile_grid: quantile_grid.to_vec(),
        anchors_in_range: Vec::new(),
        cumulative_mean_count: Vec::new(),
        cumulative_precision: Vec::new(),
    };
    for &q in quantile_grid {
        let take = if m == 0 { 0 } else { ((q / 100.0 * m as f64).ceil() as usize).clamp(1, m) };
        let head = &rows[..take];
        let np: u64 = head.iter().map(|r| r.positives as u64).sum();
        let tp: u64 = head.iter().map(|r| r.true_positives as u64).sum();
        report.anchors_in_range.push(take);
        report
            .cumulative_mean_count
            .push(if take == 0 { 0.0 } else { np as f64 / take as f64 });
        report.cumulative_precision.push(ratio(tp, np));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Few,
    Medium,
    Many,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band: Band,
    pub classes: Vec<u32>,
    pub report: TrustReport,
}

/// Cut points on the class-frequency rank, as fractions of the class count:
/// classes whose rank fraction is at most `cuts[0]` are Few, at most
/// `cuts[1]` Medium, the rest Many.
pub const DEFAULT_BAND_CUTS: [f64; 2] = [1.0 / 3.0, 2.0 / 3.0];

/// Trust metrics restricted to anchors of rare, medium and frequent classes.
pub fn frequency_breakdown(result: &MiningResult, labels: Option<&[u32]>, cuts: [f64; 2]) -> Result<Vec<BandReport>> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    if !(0.0 <= cuts[0] && cuts[0] <= cuts[1] && cuts[1] <= 1.0) {
        return Err(Error::InvalidConfig(format!("band cuts {cuts:?} must satisfy 0 <= a <= b <= 1")));
    }
    let rows = trust_rows(result, labels)?;
    let counts = class_counts(labels);
    let mut present: Vec<u32> = (0..counts.len() as u32).filter(|&c| counts[c as usize] > 0).collect();
    present.sort_by_key(|&c| (counts[c as usize], c));
    let total = present.len() as f64;
    let mut band_of = vec![Band::Many; counts.len()];
    let mut classes: [Vec<u32>; 3] = Default::default();
    for (rank, &c) in present.iter().enumerate() {
        let pos = (rank + 1) as f64 / total;
        let band = if pos <= cuts[0] + 1e-12 {
            Band::Few
        } else if pos <= cuts[1] + 1e-12 {
            Band::Medium
        } else {
            Band::Many
        };
        band_of[c as usize] = band;
        classes[band as usize].push(c);
    }
    let mut split: [Vec<AnchorTrust>; 3] = Default::default();
    for r in rows {
        split[band_of[r.label as usize] as usize].push(r);
    }
    Ok([Band::Few, Band::Medium, Band::Many]
        .into_iter()
        .zip(split)
        .zip(classes)
        .map(|((band, rows), mut classes)| {
            classes.sort_unstable();
            BandReport {
                band,
                classes,
                report: aggregate(rows),
            }
        })
        .collect())
}

/// Cosine silhouette: for each row, mean similarity to its own class minus
/// the highest mean similarity to another class, averaged over rows.
/// Ranges over [-2, 2]; higher means purer.
pub fn label_purity(rows: &FeatureBatch, labels: &[u32]) -> Result<f64> {
    if labels.len() != rows.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            rows.rows()
        )));
    }
    let counts = class_counts(labels);
    let dim = rows.dim();
    let mut sums = vec![0.0; counts.len() * dim];
    for (i, &l) in labels.iter().enumerate() {
        for (s, x) in sums[l as usize * dim..(l as usize + 1) * dim].iter_mut().zip(rows.row(i)) {
            *s += x;
        }
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let zi = rows.row(i);
        let mut own = 0.0;
        let mut other = f64::NEG_INFINITY;
        for (c, &count) in counts.iter().enumerate() {
            let s = dot(zi, &sums[c * dim..(c + 1) * dim]);
            if c == l as usize {
                if count > 1 {
                    own = (s - dot(zi, zi)) / (count - 1) as f64;
                }
            } else if count > 0 {
                other = other.max(s / count as f64);
            }
        }
        if other == f64::NEG_INFINITY {
            other = 0.0;
        }
        total += own - other;
    }
    Ok(total / labels.len() as f64)
}
