mod common;

use ppap::eval::label_purity;
use ppap::objective::{
    contrastive_grad, contrastive_loss, per_anchor_loss, train_projection, LossConfig, ProjectionState, Rows,
};
use ppap::result::{AnchorSets, MiningResult, StrategyConfig};
use ppap::synthgen::Preset;
use ppap::{mine, Error, MiningConfig};
use proptest::prelude::*;

fn sets(n: usize, list: Vec<(u32, Vec<u32>, Vec<u32>)>) -> MiningResult {
    MiningResult::new(
        n,
        StrategyConfig::Ppap(MiningConfig::default()),
        list.into_iter()
            .map(|(anchor, positives, ambiguous)| AnchorSets {
                anchor,
                positives,
                ambiguous,
                diagnostics: None,
            })
            .collect(),
    )
}

fn angles(deg: &[f64]) -> Vec<f64> {
    deg.iter().flat_map(|d| [d.to_radians().cos(), d.to_radians().sin()]).collect()
}

/// Term-by-term scalar evaluation, no stabilization.
fn naive_loss(z: &[f64], dim: usize, r: &MiningResult, tau: f64) -> f64 {
    let row = |i: usize| &z[i * dim..(i + 1) * dim];
    let sim = |i: usize, j: usize| row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum::<f64>() / tau;
    let mut total = 0.0;
    for s in &r.anchors {
        let i = s.anchor as usize;
        let mut denom = 0.0;
        for j in s.positives.iter().copied().chain(s.negatives(r.candidates)) {
            denom += sim(i, j as usize).exp();
        }
        let mut term = 0.0;
        for &p in &s.positives {
            term -= (sim(i, p as usize).exp() / denom).ln();
        }
        total += term / s.positives.len() as f64;
    }
    total / r.anchors.len() as f64
}

fn finite_difference(z: &[f64], dim: usize, r: &MiningResult, tau: f64, h: f64) -> Vec<f64> {
    let mut zp = z.to_vec();
    (0..z.len())
        .map(|k| {
            let orig = zp[k];
            zp[k] = orig + h;
            let up = contrastive_loss(Rows::new(&zp, dim).unwrap(), r, tau, None).unwrap();
            zp[k] = orig - h;
            let down = contrastive_loss(Rows::new(&zp, dim).unwrap(), r, tau, None).unwrap();
            zp[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

#[test]
fn hand_fixture_matches_naive_evaluation() {
    let z = angles(&[0.0, 15.0, 180.0, 195.0]);
    let r = sets(4, vec![(0, vec![0, 1], vec![])]);
    let expected = {
        let c = |d: f64| d.to_radians().cos();
        let denom = c(0.0).exp() + c(15.0).exp() + c(180.0).exp() + c(195.0).exp();
        -0.5 * ((c(0.0).exp() / denom).ln() + (c(15.0).exp() / denom).ln())
    };
    let got = contrastive_loss(Rows::new(&z, 2).unwrap(), &r, 1.0, None).unwrap();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

#[test]
fn single_positive_without_negatives_is_zero() {
    let z = angles(&[0.0, 40.0, 100.0]);
    let r = sets(3, vec![(0, vec![1], vec![0, 2])]);
    assert_eq!(contrastive_loss(Rows::new(&z, 2).unwrap(), &r, 0.3, None).unwrap(), 0.0);
}

#[test]
fn stationary_at_the_floor() {
    // Positive coincides with the anchor, the only other row is ambiguous.
    let z = angles(&[30.0, 30.0, 210.0]);
    let r = sets(3, vec![(0, vec![0, 1], vec![2])]);
    let g = contrastive_grad(Rows::new(&z, 2).unwrap(), &r, 0.5, None).unwrap();
    assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-8);
}

#[test]
fn symmetric_anchors_have_equal_terms() {
    let z = angles(&[0.0, 20.0, 180.0, 200.0]);
    let r = sets(4, vec![(0, vec![0, 1], vec![]), (2, vec![2, 3], vec![])]);
    let terms = per_anchor_loss(Rows::new(&z, 2).unwrap(), &r, 0.7, None).unwrap();
    assert!((terms[0] - terms[1]).abs() < 1e-12);
}

#[test]
fn empty_positive_set_is_rejected() {
    let z = angles(&[0.0, 90.0]);
    let r = sets(2, vec![(0, vec![], vec![])]);
    let err = contrastive_loss(Rows::new(&z, 2).unwrap(), &r, 1.0, None).unwrap_err();
    assert!(matches!(err.root(), Error::EmptyPositiveSet));
}

#[test]
fn gradient_norm_shrinks_with_temperature() {
    // Negatives sit closer to the anchor than its positive, so the softmax
    // never saturates and the 1/tau factor dominates.
    let z = angles(&[0.0, 70.0, 20.0, 340.0]);
    let r = sets(4, vec![(0, vec![0, 1], vec![])]);
    let norms: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&tau| {
            let g = contrastive_grad(Rows::new(&z, 2).unwrap(), &r, tau, None).unwrap();
            g.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
}

#[test]
fn training_is_seeded_and_zero_epochs_is_initialization() {
    let batch = Preset::TwoClusters.sample(0);
    let result = mine(&batch, &MiningConfig::default(), None).unwrap();
    let cfg = LossConfig { epochs: 0, ..LossConfig::default() };
    let state = train_projection(&batch, &result, &cfg).unwrap();
    let init = ProjectionState::seeded(batch.dim(), cfg.projection_dim, cfg.seed);
    assert_eq!(state.weights, init.weights);
    assert_eq!(state.loss_history.len(), 1);

    let frozen = train_projection(&batch, &result, &LossConfig { epochs: 5, learning_rate: 0.0, ..cfg }).unwrap();
    assert!(frozen.loss_history.iter().all(|&l| l == frozen.loss_history[0]));

    let cfg = LossConfig { epochs: 20, ..LossConfig::default() };
    assert_eq!(
        train_projection(&batch, &result, &cfg).unwrap(),
        train_projection(&batch, &result, &cfg).unwrap()
    );
}

#[test]
fn training_improves_loss_and_purity() {
    let batch = Preset::TwoClusters.sample(0);
    let labels = batch.labels().unwrap().to_vec();
    let result = mine(&batch, &MiningConfig::default(), None).unwrap();
    let state = train_projection(&batch, &result, &LossConfig::default()).unwrap();
    let (first, last) = (state.loss_history[0], *state.loss_history.last().unwrap());
    assert!(last < first);
    let z = state.project(&batch).unwrap();
    assert!(label_purity(&z, &labels).unwrap() > label_purity(&batch, &labels).unwrap());
}

#[test]
fn row_count_mismatch_is_rejected() {
    let batch = Preset::TwoClusters.sample(0);
    let result = sets(3, vec![(0, vec![0], vec![])]);
    assert!(matches!(
        train_projection(&batch, &result, &LossConfig::default()),
        Err(Error::DimensionMismatch(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), n in 2usize..24, dim in 2usize..8) {
        let mut rng = common::rng(seed);
        let z = common::unit_rows(&mut rng, n, dim);
        let r = common::random_sets(&mut rng, n);
        let tau = [0.1, 0.5, 1.0][seed as usize % 3];
        let g = contrastive_grad(Rows::new(&z, dim).unwrap(), &r, tau, None).unwrap();
        let fd = finite_difference(&z, dim, &r, tau, 1e-5);
        prop_assert!(max_relative_error(&g, &fd) < 1e-4);
    }

    #[test]
    fn loss_matches_naive_formula(seed in any::<u64>(), n in 2usize..20, dim in 2usize..6) {
        let mut rng = common::rng(seed);
        let z = common::unit_rows(&mut rng, n, dim);
        let r = common::random_sets(&mut rng, n);
        let tau = [0.2, 0.5, 1.0, 3.0][seed as usize % 4];
        let got = contrastive_loss(Rows::new(&z, dim).unwrap(), &r, tau, None).unwrap();
        prop_assert!((got - naive_loss(&z, dim, &r, tau)).abs() < 1e-9);
    }

    #[test]
    fn loss_is_invariant_to_set_order(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = common::rng(seed);
        let z = common::unit_rows(&mut rng, n, 3);
        let r = common::random_sets(&mut rng, n);
        let mut shuffled = r.clone();
        for s in &mut shuffled.anchors {
            s.positives.reverse();
        }
        shuffled.anchors.reverse();
        let a = contrastive_loss(Rows::new(&z, 3).unwrap(), &r, 0.5, None).unwrap();
        let b = contrastive_loss(Rows::new(&z, 3).unwrap(), &shuffled, 0.5, None).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
