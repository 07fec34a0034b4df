//! Contrastive objective over mined sets and a linear projection trained
//! with it.
//!
//! For anchor `i` with positives `P` and negatives `N` (ambiguous rows are
//! left out entirely):
//!
//! ```text
//! L_i = -1/|P| * sum_{p in P} log( exp(z_i·z_p / tau) / sum_{n in P ∪ N} exp(z_i·z_n / tau) )
//!     = logsumexp_{n in P ∪ N}(z_i·z_n / tau) - mean_{p in P}(z_i·z_p / tau)
//! ```
//!
//! The reported loss is the mean of `L_i` over anchors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{FeatureBatch, Precision};
use crate::result::{AnchorSets, MiningResult};
use crate::similarity::dot;

/// Anchors per work unit. Partial gradients are summed in unit order, so
/// this constant, not the thread count, fixes the reduction order.
const ANCHOR_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub projection_dim: usize,
    /// Seeds the initial projection weights.
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            learning_rate: 0.5,
            epochs: 200,
            projection_dim: 8,
            seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.projection_dim == 0 {
            return Err(Error::InvalidConfig("projection_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Borrowed row-major matrix of projected features.
#[derive(Clone, Copy, Debug)]
pub struct Rows<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

impl<'a> From<&'a FeatureBatch> for Rows<'a> {
    fn from(b: &'a FeatureBatch) -> Self {
        Rows {
            data: b.data(),
            dim: b.dim(),
        }
    }
}

fn select<'r>(result: &'r MiningResult, anchors: Option<&[usize]>) -> Result<Vec<&'r AnchorSets>> {
    let sets: Vec<&AnchorSets> = match anchors {
        None => result.anchors.iter().collect(),
        Some(ids) => ids
            .iter()
            .map(|&a| result.find(a).ok_or(Error::AnchorNotMined(a)))
            .collect::<Result<_>>()?,
    };
    for s in &sets {
        if s.positives.is_empty() {
            return Err(Error::EmptyPositiveSet.at_anchor(s.anchor as usize));
        }
    }
    Ok(sets)
}

fn check_shapes(z: &Rows<'_>, result: &MiningResult, tau: f64) -> Result<()> {
    if z.len() != result.candidates {
        return Err(Error::DimensionMismatch(format!(
            "{} projected rows for {} mined candidates",
            z.len(),
            result.candidates
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Candidates outside the ambiguous set, i.e. `P ∪ N`, with their scaled
/// similarity to the anchor. Also returns the running max.
fn logits(z: &Rows<'_>, s: &AnchorSets, tau: f64, out: &mut Vec<(u32, f64)>) -> f64 {
    out.clear();
    let zi = z.row(s.anchor as usize);
    let mut amb = s.ambiguous.iter().peekable();
    let mut max = f64::NEG_INFINITY;
    for j in 0..z.len() as u32 {
        while amb.next_if(|&&a| a < j).is_some() {}
        if amb.peek() == Some(&&j) {
            continue;
        }
        let l = dot(zi, z.row(j as usize)) / tau;
        max = max.max(l);
        out.push((j, l));
    }
    max
}

/// Per-anchor loss `L_i` together with the softmax weights over `P ∪ N`.
fn anchor_term(z: &Rows<'_>, s: &AnchorSets, tau: f64, buf: &mut Vec<(u32, f64)>) -> f64 {
    let max = logits(z, s, tau, buf);
    let sum: f64 = buf.iter().map(|&(_, l)| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let zi = z.row(s.anchor as usize);
    let pos_mean = s
        .positives
        .iter()
        .map(|&p| dot(zi, z.row(p as usize)) / tau)
        .sum::<f64>()
        / s.positives.len() as f64;
    lse - pos_mean
}

/// Loss of each selected anchor, in selection order.
pub fn per_anchor_loss(z: Rows<'_>, result: &MiningResult, tau: f64, anchors: Option<&[usize]>) -> Result<Vec<f64>> {
    check_shapes(&z, result, tau)?;
    let sets = select(result, anchors)?;
    let terms: Vec<f64> = sets
        .par_iter()
        .map_init(Vec::new, |buf, s| anchor_term(&z, s, tau, buf))
        .collect();
    if let Some(i) = terms.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite("contrastive loss").at_anchor(sets[i].anchor as usize));
    }
    Ok(terms)
}

/// Mean contrastive loss over the selected anchors (all mined anchors when
/// `anchors` is `None`).
pub fn contrastive_loss(z: Rows<'_>, result: &MiningResult, tau: f64, anchors: Option<&[usize]>) -> Result<f64> {
    let terms = per_anchor_loss(z, result, tau, anchors)?;
    if terms.is_empty() {
        return Ok(0.0);
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Gradient of [`contrastive_loss`] with respect to every row of `z`,
/// treating the rows as free variables. Returned row-major, same shape as `z`.
pub fn contrastive_grad(z: Rows<'_>, result: &MiningResult, tau: f64, anchors: Option<&[usize]>) -> Result<Vec<f64>> {
    Ok(loss_and_grad(z, result, tau, anchors)?.1)
}

pub fn loss_and_grad(
    z: Rows<'_>,
    result: &MiningResult,
    tau: f64,
    anchors: Option<&[usize]>,
) -> Result<(f64, Vec<f64>)> {
    check_shapes(&z, result, tau)?;
    let sets = select(result, anchors)?;
    let dim = z.dim;
    let n = z.len();
    if sets.is_empty() {
        return Ok((0.0, vec![0.0; n * dim]));
    }
    let scale = 1.0 / (sets.len() as f64 * tau);

    let partials: Vec<(f64, Vec<f64>)> = sets
        .par_chunks(ANCHOR_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n * dim];
            let mut buf = Vec::new();
            let mut loss = 0.0;
            for s in chunk {
                let i = s.anchor as usize;
                let max = logits(&z, s, tau, &mut buf);
                let sum: f64 = buf.iter().map(|&(_, l)| (l - max).exp()).sum();
                let lse = max + sum.ln();
                let inv_p = 1.0 / s.positives.len() as f64;
                let zi = z.row(i);
                let mut pos_mean = 0.0;
                let mut pos = s.positives.iter().peekable();
                let mut gi = vec![0.0; dim];
                for &(j, l) in &buf {
                    while pos.next_if(|&&p| p < j).is_some() {}
                    let is_pos = pos.peek() == Some(&&j);
                    let mut w = (l - lse).exp();
                    if is_pos {
                        w -= inv_p;
                        pos_mean += l * inv_p;
                    }
                    let zj = z.row(j as usize);
                    for (g, x) in gi.iter_mut().zip(zj) {
                        *g += w * x;
                    }
                    for (g, x) in grad[j as usize * dim..(j as usize + 1) * dim].iter_mut().zip(zi) {
                        *g += w * scale * x;
                    }
                }
                // Positives are a subset of P ∪ N, so every one was visited above.
                for (g, x) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&gi) {
                    *g += scale * x;
                }
                loss += lse - pos_mean;
            }
            (loss, grad)
        })
        .collect();

    let mut total = 0.0;
    let mut grad = vec![0.0; n * dim];
    for (l, g) in partials {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let loss = total / sets.len() as f64;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("contrastive gradient"));
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionState {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `input_dim x output_dim`.
    pub weights: Vec<f64>,
    /// Loss before any update followed by the loss after each epoch.
    pub loss_history: Vec<f64>,
}

impl ProjectionState {
    pub fn seeded(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let weights = (0..input_dim * output_dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        Self {
            input_dim,
            output_dim,
            weights,
            loss_history: Vec::new(),
        }
    }

    /// Weight matrix as a batch (one row per input dimension) for storage
    /// in the feature container.
    pub fn weights_batch(&self) -> Result<FeatureBatch> {
        FeatureBatch::new(self.weights.clone(), self.input_dim, self.output_dim)
    }

    pub fn from_weights_batch(batch: &FeatureBatch) -> Self {
        Self {
            input_dim: batch.rows(),
            output_dim: batch.dim(),
            weights: batch.data().to_vec(),
            loss_history: Vec::new(),
        }
    }

    /// Un-normalized projections `f W`.
    fn project_raw(&self, batch: &FeatureBatch) -> Vec<f64> {
        let p = self.output_dim;
        let mut out = vec![0.0; batch.rows() * p];
        out.par_chunks_exact_mut(p).enumerate().for_each(|(i, zrow)| {
            for (k, &f) in batch.row(i).iter().enumerate() {
                let w = &self.weights[k * p..(k + 1) * p];
                for (z, &wk) in zrow.iter_mut().zip(w) {
                    *z += f * wk;
                }
            }
        });
        out
    }

    /// Projected rows scaled to unit length.
    pub fn project(&self, batch: &FeatureBatch) -> Result<FeatureBatch> {
        if batch.dim() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "projection expects dimension {}, batch has {}",
                self.input_dim,
                batch.dim()
            )));
        }
        let mut z = self.project_raw(batch);
        for (i, row) in z.chunks_exact_mut(self.output_dim).enumerate() {
            let n = dot(row, row).sqrt();
            if n == 0.0 {
                return Err(Error::ZeroVector(i));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        let out = FeatureBatch::new(z, batch.rows(), self.output_dim)?;
        let out = match batch.labels() {
            Some(l) => out.with_labels(l.to_vec())?,
            None => out,
        };
        out.with_precision(Precision::F64).assume_normalized()
    }
}

/// Gradient descent on a linear projection `z = normalize(f W)` against the
/// contrastive loss of a fixed mining result.
pub fn train_projection(batch: &FeatureBatch, result: &MiningResult, config: &LossConfig) -> Result<ProjectionState> {
    config.validate()?;
    if batch.rows() != result.candidates {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} mined candidates",
            batch.rows(),
            result.candidates
        )));
    }
    let mut state = ProjectionState::seeded(batch.dim(), config.projection_dim, config.seed);
    let p = config.projection_dim;
    let d = batch.dim();

    for epoch in 0..=config.epochs {
        let mut z = state.project_raw(batch);
        let mut norms = Vec::with_capacity(batch.rows());
        for row in z.chunks_exact_mut(p) {
            let n = dot(row, row).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            row.iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        let rows = Rows { data: &z, dim: p };
        if epoch == config.epochs {
            let loss = contrastive_loss(rows, result, config.tau, None).map_err(|_| Error::Diverged { epoch })?;
            state.loss_history.push(loss);
            break;
        }
        let (loss, mut grad) =
            loss_and_grad(rows, result, config.tau, None).map_err(|_| Error::Diverged { epoch })?;
        state.loss_history.push(loss);

        // Chain rule through the row normalization.
        for (i, g) in grad.chunks_exact_mut(p).enumerate() {
            let zi = &z[i * p..(i + 1) * p];
            let radial = dot(g, zi);
            for (gk, zk) in g.iter_mut().zip(zi) {
                *gk = (*gk - radial * zk) / norms[i];
            }
        }
        let mut dw = vec![0.0; d * p];
        for (i, g) in grad.chunks_exact(p).enumerate() {
            for (k, &f) in batch.row(i).iter().enumerate() {
                for (w, gk) in dw[k * p..(k + 1) * p].iter_mut().zip(g) {
                    *w += f * gk;
                }
            }
        }
        for (w, g) in state.weights.iter_mut().zip(&dw) {
            *w -= config.learning_rate * g;
        }
        if state.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(state)
}
