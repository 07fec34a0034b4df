mod common;

use ppap::baselines::{knn_mine, KnnConfig};
use ppap::eval::*;
use ppap::synthgen::Preset;
use ppap::{mine, Error, MiningConfig};
use proptest::prelude::*;
use rand::Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn exhaustive_best(table: &[Vec<u64>]) -> u64 {
    permutations(table.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(t, &c)| table[t][c]).sum())
        .max()
        .unwrap()
}

#[test]
fn permutation_helper_is_complete() {
    assert_eq!(permutations(4).len(), 24);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn hungarian_equals_exhaustive_optimum(seed in any::<u64>(), classes in 1usize..=7) {
        let mut rng = common::rng(seed);
        let n = rng.random_range(1..200);
        let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..classes as u32)).collect();
        let pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..classes as u32)).collect();
        let table = contingency(&pred, &truth, classes).unwrap();
        let assignment = max_weight_assignment(&table);
        let got: u64 = assignment.iter().enumerate().map(|(t, &c)| table[t][c]).sum();
        prop_assert_eq!(got, exhaustive_best(&table));
        let report = hungarian_match(&pred, &truth, classes).unwrap();
        prop_assert!((report.accuracy - got as f64 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn trust_ratios_are_label_permutation_invariant(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = common::rng(seed);
        let batch = common::clustered_batch(&mut rng, n, 4);
        let labels = batch.labels().unwrap().to_vec();
        let result = mine(&batch, &common::random_config(&mut rng), None).unwrap();
        let relabeled: Vec<u32> = labels.iter().map(|&l| 17 - l).collect();
        let a = trust_report(&result, Some(&labels)).unwrap();
        let b = trust_report(&result, Some(&relabeled)).unwrap();
        prop_assert_eq!(a.tp_in_p_ratio, b.tp_in_p_ratio);
        prop_assert_eq!(a.fp_in_n_ratio, b.fp_in_n_ratio);
        prop_assert!((0.0..=1.0).contains(&a.tp_in_p_ratio) && (0.0..=1.0).contains(&a.fp_in_n_ratio));
        let c = curve_report(&result, Some(&labels), &default_quantile_grid()).unwrap();
        prop_assert_eq!(*c.cumulative_precision.last().unwrap(), a.tp_in_p_ratio);
        prop_assert_eq!(*c.cumulative_mean_count.last().unwrap(), a.mean_positive_count);
    }
}

#[test]
fn ppap_is_at_least_as_precise_as_knn_on_two_clusters() {
    let batch = Preset::TwoClusters.sample(0);
    let labels = batch.labels().unwrap().to_vec();
    let p = trust_report(&mine(&batch, &MiningConfig::default(), None).unwrap(), Some(&labels)).unwrap();
    let k = trust_report(&knn_mine(&batch, &KnnConfig { k: 5 }, None).unwrap(), Some(&labels)).unwrap();
    assert!(p.tp_in_p_ratio >= k.tp_in_p_ratio);
}

#[test]
fn long_tail_bands_are_populated_and_few_band_favours_ppap() {
    let batch = Preset::LongTail.sample(0);
    let labels = batch.labels().unwrap().to_vec();
    let ppap = mine(&batch, &MiningConfig::default(), None).unwrap();
    let p_bands = frequency_breakdown(&ppap, Some(&labels), DEFAULT_BAND_CUTS).unwrap();
    assert_eq!(p_bands.len(), 3);
    assert!(p_bands.iter().all(|b| b.report.anchors > 0 && b.classes.len() == 2));
    // Rarest classes first.
    assert_eq!(p_bands[0].classes, vec![4, 5]);

    let k = trust_report(&ppap, Some(&labels)).unwrap().mean_positive_count.round() as usize;
    let knn = knn_mine(&batch, &KnnConfig { k }, None).unwrap();
    let k_bands = frequency_breakdown(&knn, Some(&labels), DEFAULT_BAND_CUTS).unwrap();
    assert!(p_bands[0].report.tp_in_p_ratio >= k_bands[0].report.tp_in_p_ratio);
}

#[test]
fn curve_grid_on_overlapping_mixture() {
    // Anchors are ordered by |P|, so the cumulative mean count never falls.
    let batch = Preset::Overlap8.sample(0);
    let labels = batch.labels().unwrap().to_vec();
    let cfg = MiningConfig { steps: 0, ..MiningConfig::default() };
    let result = mine(&batch, &cfg, None).unwrap();
    let c = curve_report(&result, Some(&labels), &default_quantile_grid()).unwrap();
    assert_eq!(c.quantile_grid.len(), 10);
    assert_eq!(*c.anchors_in_range.last().unwrap(), batch.rows());
    assert!(c.anchors_in_range.windows(2).all(|w| w[0] < w[1]));
    assert!(c.cumulative_mean_count.windows(2).all(|w| w[0] <= w[1]));
    let t = trust_report(&result, Some(&labels)).unwrap();
    assert_eq!(*c.cumulative_precision.last().unwrap(), t.tp_in_p_ratio);
}

#[test]
fn missing_labels_are_reported() {
    let batch = Preset::TwoClusters.sample(0).without_labels();
    let result = mine(&batch, &MiningConfig::default(), None).unwrap();
    assert!(matches!(trust_report(&result, batch.labels()), Err(Error::MissingLabels)));
}
