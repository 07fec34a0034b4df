#![allow(dead_code)]

use ppap::result::{AnchorSets, MiningResult, StrategyConfig};
use ppap::{FeatureBatch, MiningConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    let mut data: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    for row in data.chunks_exact_mut(dim) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    data
}

/// A normalized batch of a few noisy clusters, so mined sets are neither
/// trivially empty nor the whole batch.
pub fn clustered_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> FeatureBatch {
    let clusters = rng.random_range(1..=6usize);
    let centers = unit_rows(rng, clusters, dim);
    let spread: f64 = rng.random_range(0.05..0.8);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..clusters);
        let mut row: Vec<f64> = centers[c * dim..(c + 1) * dim]
            .iter()
            .map(|&m| m + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
        data.extend(row);
        labels.push(c as u32);
    }
    FeatureBatch::new(data, n, dim)
        .unwrap()
        .with_labels(labels)
        .unwrap()
        .assume_normalized()
        .unwrap()
}

/// A valid configuration drawn over the whole admissible range.
pub fn random_config(rng: &mut ChaCha8Rng) -> MiningConfig {
    let phi0: f64 = if rng.random_bool(0.05) { 1.0 } else { rng.random_range(0.0..0.99) };
    let psi0 = rng.random_range((phi0 - 1.2).max(-0.99)..phi0 - 0.001);
    MiningConfig {
        phi0,
        psi0,
        sigma_pos: rng.random_range(0.5..6.0),
        sigma_amb: rng.random_range(0.5..6.0),
        steps: rng.random_range(0..=4),
        clamp_margin: [0.001, 0.01, 0.05][rng.random_range(0..3)],
        normalize_proxy: rng.random_bool(0.85),
    }
}

/// Random sets per anchor: the anchor is positive, others are positive,
/// ambiguous or negative at random.
pub fn random_sets(rng: &mut ChaCha8Rng, n: usize) -> MiningResult {
    let p_pos = rng.random_range(0.05..0.5);
    let p_amb = rng.random_range(0.0..0.4);
    let anchors = (0..n as u32)
        .map(|i| {
            let mut positives = Vec::new();
            let mut ambiguous = Vec::new();
            for j in 0..n as u32 {
                let u: f64 = rng.random();
                if j == i || u < p_pos {
                    positives.push(j);
                } else if u < p_pos + p_amb {
                    ambiguous.push(j);
                }
            }
            AnchorSets {
                anchor: i,
                positives,
                ambiguous,
                diagnostics: None,
            }
        })
        .collect();
    MiningResult::new(n, StrategyConfig::Ppap(MiningConfig::default()), anchors)
}
