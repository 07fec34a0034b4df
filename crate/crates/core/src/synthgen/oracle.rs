//! Brute-force reference miner.
//!
//! A loop-and-scan transcription of the propagation rules, written without
//! any of the engine's helpers so the two can be checked against each other.
//! It follows the same edge-case policy as the engine:
//!
//! * similarities on a normalized batch are clamped to [-1, 1];
//! * an empty positive set is replaced by the anchor alone;
//! * a zero mean leaves the (normalized) proxy where it was;
//! * the proxy movement `1 - v_prev · v_new` is floored at zero;
//! * `psi` is clamped to `phi - clamp_margin` at every step, step 0 included;
//! * `psi >= phi` at the end is an error.

// Index loops on purpose: this should read like the rules, not the engine.
#![allow(clippy::needless_range_loop, clippy::manual_clamp)]

use crate::error::{Error, Result};
use crate::feature_store::FeatureBatch;
use crate::mining::MiningConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleStep {
    pub proxy: Vec<f64>,
    pub phi: f64,
    pub psi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTrace {
    pub positives: Vec<usize>,
    pub ambiguous: Vec<usize>,
    pub negatives: Vec<usize>,
    /// One entry per step, `t = 0..=T`.
    pub trajectory: Vec<OracleStep>,
}

pub fn oracle_mine(batch: &FeatureBatch, config: &MiningConfig, anchor: usize) -> Result<OracleTrace> {
    config.validate()?;
    let n = batch.rows();
    if anchor >= n {
        return Err(Error::DimensionMismatch(format!("anchor {anchor} out of range")));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|j| batch.row(j).to_vec()).collect();
    let clamp = batch.is_normalized();

    let similarity = |a: &Vec<f64>, b: &Vec<f64>| -> f64 {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += a[k] * b[k];
        }
        if clamp {
            if s > 1.0 {
                s = 1.0;
            }
            if s < -1.0 {
                s = -1.0;
            }
        }
        s
    };

    let gather = |v: &Vec<f64>, phi: f64| -> Vec<usize> {
        let mut p = Vec::new();
        for j in 0..n {
            if similarity(v, &rows[j]) > phi {
                p.push(j);
            }
        }
        if p.is_empty() {
            p.push(anchor);
        }
        p
    };

    let mut v = rows[anchor].clone();
    let mut phi = config.phi0;
    let mut psi = config.psi0;
    if psi > phi - config.clamp_margin {
        psi = phi - config.clamp_margin;
    }
    let mut p = gather(&v, phi);
    let mut trajectory = vec![OracleStep { proxy: v.clone(), phi, psi }];

    for _t in 1..=config.steps {
        let dim = v.len();
        let mut m = vec![0.0; dim];
        for &j in &p {
            for k in 0..dim {
                m[k] += rows[j][k];
            }
        }
        for k in 0..dim {
            m[k] /= p.len() as f64;
        }

        let new_v = if config.normalize_proxy {
            let mut sq = 0.0;
            for k in 0..dim {
                sq += m[k] * m[k];
            }
            let len = sq.sqrt();
            if len > 0.0 {
                for k in 0..dim {
                    m[k] /= len;
                }
                m
            } else {
                v.clone()
            }
        } else {
            m
        };

        let mut moved = 1.0 - similarity(&v, &new_v);
        if moved < 0.0 {
            moved = 0.0;
        }
        phi -= moved / config.sigma_pos;
        psi += moved / config.sigma_amb;
        if psi > phi - config.clamp_margin {
            psi = phi - config.clamp_margin;
        }
        v = new_v;
        p = gather(&v, phi);
        trajectory.push(OracleStep { proxy: v.clone(), phi, psi });
    }

    if psi >= phi {
        return Err(Error::CriterionInversion { anchor, phi, psi });
    }

    let mut ambiguous = Vec::new();
    let mut negatives = Vec::new();
    for j in 0..n {
        if p.contains(&j) {
            continue;
        }
        let s = similarity(&v, &rows[j]);
        if s > psi && s < phi {
            ambiguous.push(j);
        } else {
            negatives.push(j);
        }
    }

    Ok(OracleTrace {
        positives: p,
        ambiguous,
        negatives,
        trajectory,
    })
}
