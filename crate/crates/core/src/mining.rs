//! Progressive proxy anchor propagation.
//!
//! For every anchor `f_i` the miner starts from a tight positive set around
//! the anchor, then repeatedly moves a proxy to the mean of the current
//! positives, loosens the positiveness threshold `phi` and tightens the
//! ambiguity threshold `psi` in proportion to how far the proxy moved, and
//! regathers positives around the new proxy. The final proxy splits the batch
//! into positives (`sim > phi`), an ambiguous band (`psi < sim < phi`) that is
//! ignored by the loss, and negatives (everything else).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureBatch;
use crate::result::{AnchorDiagnostics, AnchorSets, MiningResult, StrategyConfig};
use crate::similarity::{dot, normalize_in_place, similarities_into};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Initial positiveness threshold, shared by all anchors.
    pub phi0: f64,
    /// Initial ambiguity threshold, shared by all anchors.
    pub psi0: f64,
    /// Damping of the `phi` reduction.
    pub sigma_pos: f64,
    /// Damping of the `psi` increase.
    pub sigma_amb: f64,
    /// Number of relocation steps `T`.
    pub steps: usize,
    /// Minimum gap kept between `phi` and `psi`.
    pub clamp_margin: f64,
    /// Re-normalize the proxy after averaging. Turning this off keeps the raw
    /// mean, whose norm shrinks with the spread of the positives.
    pub normalize_proxy: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self::coco_vit_s16()
    }
}

impl MiningConfig {
    pub const DEFAULT_CLAMP_MARGIN: f64 = 0.01;

    fn preset(phi0: f64, psi0: f64, sigma_pos: f64, sigma_amb: f64, steps: usize) -> Self {
        Self {
            phi0,
            psi0,
            sigma_pos,
            sigma_amb,
            steps,
            clamp_margin: Self::DEFAULT_CLAMP_MARGIN,
            normalize_proxy: true,
        }
    }

    pub fn coco_vit_s8() -> Self {
        Self::preset(0.55, 0.2, 3.0, 3.0, 2)
    }

    pub fn coco_vit_s16() -> Self {
        Self::preset(0.55, 0.15, 3.0, 4.0, 2)
    }

    pub fn cityscapes_vit_s8() -> Self {
        Self::preset(0.6, 0.2, 3.0, 3.0, 3)
    }

    pub fn cityscapes_vit_b8() -> Self {
        Self::preset(0.6, 0.2, 3.0, 2.0, 3)
    }

    pub fn potsdam_vit_b8() -> Self {
        Self::preset(0.55, 0.15, 5.0, 3.0, 1)
    }

    pub fn named_preset(name: &str) -> Option<Self> {
        Some(match name {
            "coco-vit-s8" => Self::coco_vit_s8(),
            "coco-vit-s16" => Self::coco_vit_s16(),
            "cityscapes-vit-s8" => Self::cityscapes_vit_s8(),
            "cityscapes-vit-b8" => Self::cityscapes_vit_b8(),
            "potsdam-vit-b8" => Self::potsdam_vit_b8(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.phi0, self.psi0, self.sigma_pos, self.sigma_amb, self.clamp_margin]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("non-finite mining parameter".into()));
        }
        if !(-1.0 < self.psi0 && self.psi0 < self.phi0 && self.phi0 <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need -1 < psi0 < phi0 <= 1, got psi0={} phi0={}",
                self.psi0, self.phi0
            )));
        }
        if self.sigma_pos <= 0.0 || self.sigma_amb <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sigma_pos and sigma_amb must be positive, got {} and {}",
                self.sigma_pos, self.sigma_amb
            )));
        }
        if self.clamp_margin < 0.0 {
            return Err(Error::InvalidConfig("clamp_margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// Criteria and proxy movement recorded at one step of the propagation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phi: f64,
    /// `psi` after the clamp; this is the value carried to the next step.
    pub psi: f64,
    pub psi_unclamped: f64,
    /// `1 - v_{t-1} · v_t` (zero at step 0).
    pub shift: f64,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorState {
    pub anchor: usize,
    pub proxy: Vec<f64>,
    pub phi: f64,
    pub psi: f64,
    pub step: usize,
    /// Sorted positive indices gathered around `proxy` with threshold `phi`.
    pub positives: Vec<u32>,
    /// Norm of the mean before re-normalization (1 at step 0).
    pub proxy_norm: f64,
    pub trajectory: Vec<StepRecord>,
}

/// Similarities on a normalized batch are cosines; rounding can push them a
/// hair outside [-1, 1], which would let a row beat `phi = 1`.
#[inline]
fn sim(batch_normalized: bool, a: &[f64], b: &[f64]) -> f64 {
    let s = dot(a, b);
    if batch_normalized {
        s.clamp(-1.0, 1.0)
    } else {
        s
    }
}

fn clamp_sims(batch: &FeatureBatch, sims: &mut [f64]) {
    if batch.is_normalized() {
        for s in sims {
            *s = s.clamp(-1.0, 1.0);
        }
    }
}

fn gather_above(sims: &[f64], threshold: f64, out: &mut Vec<u32>) {
    out.clear();
    out.extend(
        sims.iter()
            .enumerate()
            .filter(|(_, &s)| s > threshold)
            .map(|(j, _)| j as u32),
    );
}

/// Rows whose similarity to the anchor strictly exceeds `phi0`.
pub fn initial_positives(batch: &FeatureBatch, anchor: usize, phi0: f64) -> Vec<u32> {
    let mut sims = Vec::with_capacity(batch.rows());
    similarities_into(batch.data(), batch.dim(), batch.row(anchor), &mut sims);
    clamp_sims(batch, &mut sims);
    let mut out = Vec::new();
    gather_above(&sims, phi0, &mut out);
    out
}

/// Mean of the positive rows, re-normalized to unit length.
pub fn relocate_proxy(batch: &FeatureBatch, positives: &[u32]) -> Result<Vec<f64>> {
    let mut v = vec![0.0; batch.dim()];
    let norm = mean_into(batch, positives, &mut v)?;
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    Ok(v)
}

/// Writes the mean of the positive rows into `out` and returns its norm.
fn mean_into(batch: &FeatureBatch, positives: &[u32], out: &mut [f64]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptyPositiveSet);
    }
    out.fill(0.0);
    for &j in positives {
        for (o, x) in out.iter_mut().zip(batch.row(j as usize)) {
            *o += x;
        }
    }
    let count = positives.len() as f64;
    for o in out.iter_mut() {
        *o /= count;
    }
    Ok(dot(out, out).sqrt())
}

/// `1 - similarity`, floored at zero so the criteria only ever move in
/// their designated direction.
#[inline]
pub fn proxy_shift(similarity: f64) -> f64 {
    (1.0 - similarity).max(0.0)
}

pub fn update_phi_from_similarity(phi_prev: f64, similarity: f64, sigma_pos: f64) -> f64 {
    phi_prev - proxy_shift(similarity) / sigma_pos
}

pub fn update_psi_from_similarity(psi_prev: f64, similarity: f64, sigma_amb: f64) -> f64 {
    psi_prev + proxy_shift(similarity) / sigma_amb
}

/// Loosens the positiveness threshold by how far the proxy moved.
pub fn update_phi(phi_prev: f64, v_prev: &[f64], v_new: &[f64], sigma_pos: f64) -> f64 {
    update_phi_from_similarity(phi_prev, dot(v_prev, v_new), sigma_pos)
}

/// Tightens the ambiguity threshold by how far the proxy moved.
pub fn update_psi(psi_prev: f64, v_prev: &[f64], v_new: &[f64], sigma_amb: f64) -> f64 {
    update_psi_from_similarity(psi_prev, dot(v_prev, v_new), sigma_amb)
}

#[inline]
fn clamp_psi(psi: f64, phi: f64, margin: f64) -> f64 {
    psi.min(phi - margin)
}

/// Reusable per-worker buffers.
#[derive(Default)]
struct Scratch {
    sims: Vec<f64>,
    mean: Vec<f64>,
}

/// Runs the full `T`-step relocation loop for one anchor.
pub fn propagate_anchor(batch: &FeatureBatch, anchor: usize, config: &MiningConfig) -> Result<AnchorState> {
    config.validate()?;
    check_anchor(batch, anchor)?;
    propagate_with(batch, anchor, config, &mut Scratch::default())
}

fn check_anchor(batch: &FeatureBatch, anchor: usize) -> Result<()> {
    if anchor >= batch.rows() {
        return Err(Error::DimensionMismatch(format!(
            "anchor {anchor} out of range for {} rows",
            batch.rows()
        )));
    }
    Ok(())
}

/// On return `scratch.sims` holds the similarities of every row to the
/// final proxy.
fn propagate_with(
    batch: &FeatureBatch,
    anchor: usize,
    config: &MiningConfig,
    scratch: &mut Scratch,
) -> Result<AnchorState> {
    let dim = batch.dim();
    let normalized = batch.is_normalized();
    let mut proxy = batch.row(anchor).to_vec();
    let mut phi = config.phi0;
    let psi_unclamped = config.psi0;
    let mut psi = clamp_psi(psi_unclamped, phi, config.clamp_margin);
    let mut proxy_norm = 1.0;

    let mut positives = Vec::new();
    similarities_into(batch.data(), dim, &proxy, &mut scratch.sims);
    clamp_sims(batch, &mut scratch.sims);
    gather_above(&scratch.sims, phi, &mut positives);
    if positives.is_empty() {
        positives.push(anchor as u32);
    }

    let mut trajectory = Vec::with_capacity(config.steps + 1);
    trajectory.push(StepRecord {
        phi,
        psi,
        psi_unclamped,
        shift: 0.0,
        positives: positives.len(),
    });

    scratch.mean.resize(dim, 0.0);
    for _ in 0..config.steps {
        let raw_norm = mean_into(batch, &positives, &mut scratch.mean)?;
        let moved = if config.normalize_proxy {
            if raw_norm > 0.0 {
                normalize_in_place(&mut scratch.mean);
                true
            } else {
                false
            }
        } else {
            true
        };
        proxy_norm = raw_norm;
        let similarity = if moved {
            sim(normalized, &proxy, &scratch.mean)
        } else {
            sim(normalized, &proxy, &proxy)
        };
        if moved {
            proxy.copy_from_slice(&scratch.mean);
        }

        phi = update_phi_from_similarity(phi, similarity, config.sigma_pos);
        let psi_raw = update_psi_from_similarity(psi, similarity, config.sigma_amb);
        psi = clamp_psi(psi_raw, phi, config.clamp_margin);

        similarities_into(batch.data(), dim, &proxy, &mut scratch.sims);
        clamp_sims(batch, &mut scratch.sims);
        gather_above(&scratch.sims, phi, &mut positives);
        if positives.is_empty() {
            positives.push(anchor as u32);
        }
        trajectory.push(StepRecord {
            phi,
            psi,
            psi_unclamped: psi_raw,
            shift: proxy_shift(similarity),
            positives: positives.len(),
        });
    }

    Ok(AnchorState {
        anchor,
        proxy,
        phi,
        psi,
        step: config.steps,
        positives,
        proxy_norm,
        trajectory,
    })
}

/// Positive, ambiguous and negative index sets of one anchor.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub positives: Vec<u32>,
    pub ambiguous: Vec<u32>,
    pub negatives: Vec<u32>,
}

/// Splits the batch around the final proxy of `state`.
pub fn partition_sets(batch: &FeatureBatch, state: &AnchorState) -> Result<Partition> {
    let mut sims = Vec::with_capacity(batch.rows());
    similarities_into(batch.data(), batch.dim(), &state.proxy, &mut sims);
    clamp_sims(batch, &mut sims);
    let ambiguous = ambiguous_from_sims(&sims, state)?;
    let negatives = complement(batch.rows(), &state.positives, &ambiguous);
    Ok(Partition {
        positives: state.positives.clone(),
        ambiguous,
        negatives,
    })
}

fn ambiguous_from_sims(sims: &[f64], state: &AnchorState) -> Result<Vec<u32>> {
    if state.psi >= state.phi {
        return Err(Error::CriterionInversion {
            anchor: state.anchor,
            phi: state.phi,
            psi: state.psi,
        });
    }
    let mut pos = state.positives.iter().peekable();
    let mut out = Vec::new();
    for (j, &s) in sims.iter().enumerate() {
        let j = j as u32;
        while pos.next_if(|&&p| p < j).is_some() {}
        if pos.peek() == Some(&&j) {
            continue;
        }
        if s > state.psi && s < state.phi {
            out.push(j);
        }
    }
    Ok(out)
}

/// Indices in `0..n` that appear in neither sorted list.
pub(crate) fn complement(n: usize, a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(n.saturating_sub(a.len() + b.len()));
    let (mut ia, mut ib) = (a.iter().peekable(), b.iter().peekable());
    for j in 0..n as u32 {
        while ia.next_if(|&&x| x < j).is_some() {}
        while ib.next_if(|&&x| x < j).is_some() {}
        if ia.peek() != Some(&&j) && ib.peek() != Some(&&j) {
            out.push(j);
        }
    }
    out
}

/// Mines every requested anchor (all rows by default) against the frozen batch.
///
/// Anchors are independent, so the work is spread over the current rayon
/// pool; each anchor's arithmetic is sequential, which makes the output
/// identical at any thread count.
pub fn mine(batch: &FeatureBatch, config: &MiningConfig, anchors: Option<&[usize]>) -> Result<MiningResult> {
    config.validate()?;
    if batch.rows() > u32::MAX as usize {
        return Err(Error::DimensionMismatch("batch exceeds u32 index range".into()));
    }
    let all: Vec<usize>;
    let anchors = match anchors {
        Some(a) => a,
        None => {
            all = (0..batch.rows()).collect();
            &all
        }
    };
    for &a in anchors {
        check_anchor(batch, a)?;
    }

    let sets = anchors
        .par_iter()
        .map_init(Scratch::default, |scratch, &anchor| {
            let state = propagate_with(batch, anchor, config, scratch).map_err(|e| e.at_anchor(anchor))?;
            let ambiguous = ambiguous_from_sims(&scratch.sims, &state).map_err(|e| e.at_anchor(anchor))?;
            Ok(AnchorSets {
                anchor: anchor as u32,
                positives: state.positives,
                ambiguous,
                diagnostics: Some(AnchorDiagnostics {
                    proxy: state.proxy,
                    phi: state.phi,
                    psi: state.psi,
                    proxy_norm: state.proxy_norm,
                    trajectory: state.trajectory,
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MiningResult::new(batch.rows(), StrategyConfig::Ppap(*config), sets))
}
