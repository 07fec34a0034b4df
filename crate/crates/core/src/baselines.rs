//! Comparison strategies: k-th nearest neighbour positives and spherical
//! k-means cluster membership.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{sample_indices, FeatureBatch};
use crate::result::{AnchorSets, MiningResult, StrategyConfig};
use crate::similarity::{dot, similarities_into};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl KnnConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.k == 0 || self.k >= rows {
            return Err(Error::InvalidConfig(format!(
                "knn needs 1 <= k < n, got k={} with n={rows}",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansConfig {
    pub clusters: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Lloyd iterations stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            max_iters: 100,
            seed: 0,
            tol: 1e-9,
        }
    }
}

impl KmeansConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.clusters == 0 || self.clusters > rows {
            return Err(Error::InvalidConfig(format!(
                "kmeans needs 1 <= clusters <= n, got {} with n={rows}",
                self.clusters
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("kmeans max_iters must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("kmeans tol must be >= 0".into()));
        }
        Ok(())
    }
}

fn anchor_in_range(batch: &FeatureBatch, anchor: usize) -> Result<()> {
    if anchor >= batch.rows() {
        return Err(Error::DimensionMismatch(format!(
            "anchor {anchor} out of range for {} rows",
            batch.rows()
        )));
    }
    Ok(())
}

fn knn_with(batch: &FeatureBatch, anchor: usize, k: usize, sims: &mut Vec<f64>) -> Vec<u32> {
    similarities_into(batch.data(), batch.dim(), batch.row(anchor), sims);
    let mut order: Vec<u32> = (0..batch.rows() as u32).filter(|&j| j as usize != anchor).collect();
    // Higher similarity first, lower index on ties.
    let cmp = |a: &u32, b: &u32| {
        sims[*b as usize]
            .partial_cmp(&sims[*a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

/// The `k` rows most similar to the anchor, anchor excluded, as a sorted
/// index set. Ties are broken towards the lower index.
pub fn knn_positives(batch: &FeatureBatch, anchor: usize, config: &KnnConfig) -> Result<Vec<u32>> {
    config.validate(batch.rows())?;
    anchor_in_range(batch, anchor)?;
    Ok(knn_with(batch, anchor, config.k, &mut Vec::new()))
}

/// k-NN mining: the negatives are every row outside the positive set.
pub fn knn_mine(batch: &FeatureBatch, config: &KnnConfig, anchors: Option<&[usize]>) -> Result<MiningResult> {
    config.validate(batch.rows())?;
    let anchors = resolve_anchors(batch, anchors)?;
    let sets = anchors
        .par_iter()
        .map_init(Vec::new, |sims, &a| AnchorSets {
            anchor: a as u32,
            positives: knn_with(batch, a, config.k, sims),
            ambiguous: Vec::new(),
            diagnostics: None,
        })
        .collect();
    Ok(MiningResult::new(batch.rows(), StrategyConfig::Knn(*config), sets))
}

fn resolve_anchors(batch: &FeatureBatch, anchors: Option<&[usize]>) -> Result<Vec<usize>> {
    match anchors {
        Some(a) => {
            for &i in a {
                anchor_in_range(batch, i)?;
            }
            Ok(a.to_vec())
        }
        None => Ok((0..batch.rows()).collect()),
    }
}

/// Spherical Lloyd iteration seeded with `clusters` distinct rows.
pub fn kmeans_assign(batch: &FeatureBatch, config: &KmeansConfig) -> Result<Vec<u32>> {
    config.validate(batch.rows())?;
    let init = sample_indices(batch.rows(), config.clusters, config.seed);
    let centroids: Vec<f64> = init.iter().flat_map(|&i| batch.row(i).iter().copied()).collect();
    Ok(lloyd(batch, centroids, config.max_iters, config.tol))
}

/// Same as [`kmeans_assign`] but starting from explicit centroids
/// (row-major, `clusters x D`). Centroids are normalized first.
pub fn kmeans_assign_from(
    batch: &FeatureBatch,
    initial_centroids: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<Vec<u32>> {
    let dim = batch.dim();
    if initial_centroids.is_empty() || initial_centroids.len() % dim != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} centroid values do not form rows of dimension {dim}",
            initial_centroids.len()
        )));
    }
    let mut centroids = initial_centroids.to_vec();
    for c in centroids.chunks_exact_mut(dim) {
        let n = dot(c, c).sqrt();
        if n == 0.0 {
            return Err(Error::ZeroVector(0));
        }
        c.iter_mut().for_each(|x| *x /= n);
    }
    Ok(lloyd(batch, centroids, max_iters.max(1), tol))
}

fn nearest(centroids: &[f64], dim: usize, row: &[f64]) -> u32 {
    let mut best = 0u32;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(centroid, row);
        if s > best_sim {
            best_sim = s;
            best = c as u32;
        }
    }
    best
}

fn assign(batch: &FeatureBatch, centroids: &[f64]) -> Vec<u32> {
    let dim = batch.dim();
    batch
        .data()
        .par_chunks_exact(dim)
        .map(|row| nearest(centroids, dim, row))
        .collect()
}

fn lloyd(batch: &FeatureBatch, mut centroids: Vec<f64>, max_iters: usize, tol: f64) -> Vec<u32> {
    let dim = batch.dim();
    let k = centroids.len() / dim;
    for _ in 0..max_iters {
        let labels = assign(batch, &centroids);
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(batch.row(i)) {
                *s += x;
            }
        }
        let mut max_shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new = &mut sums[c * dim..(c + 1) * dim];
            let n = dot(new, new).sqrt();
            if n == 0.0 {
                continue;
            }
            new.iter_mut().for_each(|x| *x /= n);
            let old = &mut centroids[c * dim..(c + 1) * dim];
            let shift = old.iter().zip(new.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            max_shift = max_shift.max(shift);
            old.copy_from_slice(new);
        }
        if max_shift <= tol {
            break;
        }
    }
    assign(batch, &centroids)
}

/// Every row sharing the anchor's cluster, anchor included.
pub fn kmeans_positives(assignment: &[u32], anchor: usize) -> Result<Vec<u32>> {
    let label = *assignment.get(anchor).ok_or_else(|| {
        Error::DimensionMismatch(format!("anchor {anchor} outside assignment of {}", assignment.len()))
    })?;
    Ok(assignment
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(j, _)| j as u32)
        .collect())
}

pub fn kmeans_mine(batch: &FeatureBatch, config: &KmeansConfig, anchors: Option<&[usize]>) -> Result<MiningResult> {
    let assignment = kmeans_assign(batch, config)?;
    let anchors = resolve_anchors(batch, anchors)?;
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); config.clusters];
    for (j, &l) in assignment.iter().enumerate() {
        members[l as usize].push(j as u32);
    }
    let sets = anchors
        .iter()
        .map(|&a| AnchorSets {
            anchor: a as u32,
            positives: members[assignment[a] as usize].clone(),
            ambiguous: Vec::new(),
            diagnostics: None,
        })
        .collect();
    Ok(MiningResult::new(batch.rows(), StrategyConfig::Kmeans(*config), sets))
}
