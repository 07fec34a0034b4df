//! Labelled synthetic embedding batches.
//!
//! Each component is a bundle of directions around a mean on the unit
//! sphere: a Gaussian perturbation with per-coordinate spread
//! `1 / sqrt(concentration)` is added to the mean and the result is
//! re-normalized. This approximates von Mises-Fisher sampling closely enough
//! for fixtures; `concentration` is therefore only loosely the vMF kappa.

pub mod oracle;

pub use oracle::{oracle_mine, OracleStep, OracleTrace};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureBatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean_direction: Vec<f64>,
    /// Zero gives directions uniform on the sphere.
    pub concentration: f64,
    /// Class of the points drawn from this component; defaults to the
    /// component index. Several components may share a class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

/// How many points each component receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Component drawn independently per point with probability `weight`.
    #[default]
    Random,
    /// Counts fixed to `weight * count` (largest remainder), rows grouped
    /// by component in order.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub allocation: Allocation,
    pub components: Vec<Component>,
}

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.count == 0 {
            return Err(Error::InvalidConfig("mixture needs dim >= 1 and count >= 1".into()));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidConfig(format!("component {k}: weight must be positive")));
            }
            if !(c.concentration >= 0.0) {
                return Err(Error::InvalidConfig(format!("component {k}: concentration must be >= 0")));
            }
            if c.mean_direction.len() != self.dim {
                return Err(Error::InvalidConfig(format!(
                    "component {k}: mean has {} entries, expected {}",
                    c.mean_direction.len(),
                    self.dim
                )));
            }
            let n: f64 = c.mean_direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!("component {k}: mean direction has norm {n}")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!("component weights sum to {total}")));
        }
        Ok(())
    }

    fn exact_counts(&self) -> Vec<usize> {
        let raw: Vec<f64> = self.components.iter().map(|c| c.weight * self.count as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
        let mut left = self.count - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        counts
    }
}

fn sample_direction(rng: &mut ChaCha8Rng, c: &Component, out: &mut [f64]) {
    loop {
        if c.concentration == 0.0 {
            for o in out.iter_mut() {
                *o = rng.sample(StandardNormal);
            }
        } else {
            let spread = 1.0 / c.concentration.sqrt();
            for (o, m) in out.iter_mut().zip(&c.mean_direction) {
                let g: f64 = rng.sample(StandardNormal);
                *o = m + spread * g;
            }
        }
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            out.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

/// Draws a normalized, labelled batch. Labels are component indices.
pub fn sample_mixture(spec: &MixtureSpec) -> Result<FeatureBatch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let mut data = vec![0.0; spec.count * dim];
    let mut labels = Vec::with_capacity(spec.count);
    match spec.allocation {
        Allocation::Random => {
            let cumulative: Vec<f64> = spec
                .components
                .iter()
                .scan(0.0, |acc, c| {
                    *acc += c.weight;
                    Some(*acc)
                })
                .collect();
            for row in data.chunks_exact_mut(dim) {
                let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                let k = cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1);
                sample_direction(&mut rng, &spec.components[k], row);
                labels.push(spec.components[k].label.unwrap_or(k as u32));
            }
        }
        Allocation::Exact => {
            let mut rows = data.chunks_exact_mut(dim);
            for (k, count) in spec.exact_counts().into_iter().enumerate() {
                for _ in 0..count {
                    let row = rows.next().expect("counts sum to total");
                    sample_direction(&mut rng, &spec.components[k], row);
                    labels.push(spec.components[k].label.unwrap_or(k as u32));
                }
            }
        }
    }
    FeatureBatch::new(data, spec.count, dim)?
        .with_labels(labels)?
        .assume_normalized()
}

/// Uniformly random unit vector.
pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let c = Component {
        weight: 1.0,
        mean_direction: vec![0.0; dim],
        concentration: 0.0,
        label: None,
    };
    let mut v = vec![0.0; dim];
    sample_direction(rng, &c, &mut v);
    v
}

fn blend(a: &[f64], b: &[f64], cos: f64) -> Vec<f64> {
    // Gram-Schmidt b against a, then rotate a towards it.
    let proj: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let mut ortho: Vec<f64> = b.iter().zip(a).map(|(y, x)| y - proj * x).collect();
    let n = ortho.iter().map(|x| x * x).sum::<f64>().sqrt();
    ortho.iter_mut().for_each(|x| *x /= n);
    let sin = (1.0 - cos * cos).sqrt();
    a.iter().zip(&ortho).map(|(x, o)| cos * x + sin * o).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Two tight, orthogonal bundles of 20 points each in 8 dimensions.
    TwoClusters,
    /// Eight components in 32 dimensions with uneven density and pairwise
    /// overlapping means; 4096 points.
    Overlap8,
    /// Six classes whose weights halve from one to the next, each made of
    /// four separate modes; 2048 points in 32 dimensions.
    LongTail,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "two-clusters" => Preset::TwoClusters,
            "overlap8" => Preset::Overlap8,
            "long-tail" => Preset::LongTail,
            _ => return None,
        })
    }

    pub fn spec(self, seed: u64) -> MixtureSpec {
        match self {
            Preset::TwoClusters => two_clusters_spec(seed),
            Preset::Overlap8 => overlap8_spec(seed),
            Preset::LongTail => long_tail_spec(seed),
        }
    }

    pub fn sample(self, seed: u64) -> FeatureBatch {
        sample_mixture(&self.spec(seed)).expect("preset specs are valid")
    }
}

fn two_clusters_spec(seed: u64) -> MixtureSpec {
    let dim = 8;
    let axis = |k: usize| {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        v
    };
    MixtureSpec {
        dim,
        count: 40,
        seed,
        allocation: Allocation::Exact,
        components: (0..2)
            .map(|k| Component {
                weight: 0.5,
                mean_direction: axis(k),
                concentration: 400.0,
                label: None,
            })
            .collect(),
    }
}

/// Component means come in pairs: the second mean of each pair is rotated
/// towards the first so the two bundles overlap.
fn overlap8_spec(seed: u64) -> MixtureSpec {
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f76_6c70_3800_0000);
    const PAIR_COS: [f64; 4] = [0.6, 0.5, 0.4, 0.3];
    const CONCENTRATION: [f64; 8] = [40.0, 70.0, 50.0, 90.0, 60.0, 120.0, 80.0, 160.0];
    const WEIGHTS: [f64; 8] = [0.2, 0.15, 0.15, 0.1, 0.12, 0.08, 0.12, 0.08];
    let mut means = Vec::with_capacity(8);
    for &c in &PAIR_COS {
        let a = random_unit(&mut rng, dim);
        let b = blend(&a, &random_unit(&mut rng, dim), c);
        means.push(a);
        means.push(b);
    }
    MixtureSpec {
        dim,
        count: 4096,
        seed,
        allocation: Allocation::Random,
        components: means
            .into_iter()
            .enumerate()
            .map(|(k, m)| Component {
                weight: WEIGHTS[k],
                mean_direction: m,
                concentration: CONCENTRATION[k],
                label: None,
            })
            .collect(),
    }
}

/// Class weights halve from one class to the next. Each class is a union of
/// separate tight modes scattered over the sphere, the way a semantic class
/// covers several appearance modes; a single centroid per class then mixes
/// classes while local neighbourhoods stay pure.
fn long_tail_spec(seed: u64) -> MixtureSpec {
    const CLASSES: usize = 6;
    const MODES: usize = 4;
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c6f_6e67_7461_696c);
    let raw: Vec<f64> = (0..CLASSES).map(|i| 0.5f64.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    let mut components = Vec::with_capacity(CLASSES * MODES);
    for (class, w) in raw.iter().enumerate() {
        for _ in 0..MODES {
            components.push(Component {
                weight: w / total / MODES as f64,
                mean_direction: random_unit(&mut rng, dim),
                concentration: 200.0,
                label: Some(class as u32),
            });
        }
    }
    MixtureSpec {
        dim,
        count: 2048,
        seed,
        allocation: Allocation::Random,
        components,
    }
}
