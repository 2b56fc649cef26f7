mod common;

use common::*;
use eels_cvae::detect::{
    classify, detect, otsu_threshold, pr_auc, pr_curve, unimodality_check, DetectOptions, PccMap, DEFAULT_BINS,
    DEFAULT_GAMMA,
};
use eels_cvae::pca;
use eels_cvae::synth::AnomalyMask;
use eels_cvae::Error;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn otsu_matches_exhaustive_scan() {
    let mut rng = rng(11);
    let mut checked = 0;
    for _ in 0..1000 {
        let values = random_value_set(&mut rng);
        let bins = if rng.random_bool(0.5) { DEFAULT_BINS } else { rng.random_range(2..64) };
        match (otsu_threshold(&values, bins), brute_force_otsu(&values, bins)) {
            (Ok(t), Some(oracle)) => {
                assert_eq!(t, oracle, "{} values, {bins} bins", values.len());
                checked += 1;
            }
            (Err(Error::Undefined(_)), None) => {}
            (got, want) => panic!("implementation {got:?} but oracle {want:?}"),
        }
    }
    assert!(checked > 900);
}

fn two_clusters(seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let a = Normal::new(0.5, 0.02).unwrap();
    let b = Normal::new(0.95, 0.02).unwrap();
    let mut values: Vec<f64> = (0..1000).map(|_| a.sample(&mut rng)).collect();
    values.extend((0..1000).map(|_| b.sample(&mut rng)));
    values
}

#[test]
fn otsu_separates_gaussian_clusters() {
    let values = two_clusters(3);
    let t = otsu_threshold(&values, DEFAULT_BINS).unwrap();
    assert_eq!(Some(t), brute_force_otsu(&values, DEFAULT_BINS));
    // every edge inside the gap yields the same partition; ties go low
    let lower_max = values[..1000].iter().copied().fold(f64::MIN, f64::max);
    let upper_min = values[1000..].iter().copied().fold(f64::MAX, f64::min);
    assert!(t > lower_max && t <= upper_min, "threshold {t} outside ({lower_max}, {upper_min}]");
    assert!(!unimodality_check(&values, DEFAULT_BINS, DEFAULT_GAMMA));
}

#[test]
fn single_gaussian_is_unimodal() {
    for seed in 0..20 {
        let mut rng = rng(seed);
        let d = Normal::new(0.98, 0.005).unwrap();
        let values: Vec<f64> = (0..2000).map(|_| d.sample(&mut rng)).collect();
        assert!(unimodality_check(&values, DEFAULT_BINS, DEFAULT_GAMMA), "seed {seed}");
    }
    assert!(unimodality_check(&[0.7; 50], DEFAULT_BINS, DEFAULT_GAMMA));
}

/// 48×48 map with a 3% anomalous class drawn well below the bulk.
fn synthetic_map(seed: u64) -> (PccMap, AnomalyMask) {
    let mut rng = rng(seed);
    let (w, h) = (48, 48);
    let truth = AnomalyMask::from_fn(w, h, |x, y| (x / 6 + y / 6) % 11 == 0 && x % 6 < 3 && y % 6 < 3);
    let bulk = Normal::new(0.98, 0.005).unwrap();
    let anomalous = Normal::new(0.6, 0.05).unwrap();
    let values = truth
        .data()
        .iter()
        .map(|&t| {
            let v: f64 = if t { anomalous.sample(&mut rng) } else { bulk.sample(&mut rng) };
            v.clamp(-1.0, 1.0)
        })
        .collect();
    (PccMap::new(w, h, 0..1, values).unwrap(), truth)
}

#[test]
fn detection_recovers_synthetic_classes() {
    for seed in 0..10 {
        let (map, truth) = synthetic_map(seed);
        let c = classify(&map, DetectOptions::default());
        let oracle = brute_force_otsu(map.values(), DEFAULT_BINS).unwrap();
        assert_eq!(c.threshold, Some(oracle));
        let disagree = c.predicted.data().iter().zip(truth.data()).filter(|(a, b)| a != b).count();
        assert!(disagree as f64 <= 0.01 * truth.data().len() as f64, "seed {seed}: {disagree} pixels");
    }
}

#[test]
fn pr_curve_of_synthetic_map() {
    let (map, truth) = synthetic_map(5);
    let points = pr_curve(&map, &truth, 200).unwrap();
    assert!(points.windows(2).all(|w| w[0].recall <= w[1].recall));
    assert_eq!(points.first().unwrap().recall, 0.0);
    let last = points.last().unwrap();
    assert_eq!(last.recall, 1.0);
    assert!((last.precision - truth.fraction()).abs() < 1e-12);
    assert!(pr_auc(&points) > 0.95);
    assert_eq!(detect(&map, &truth, DetectOptions::default()).unwrap().metrics.fn_, 0);
}

#[test]
fn pca_matches_covariance_eigensolver() {
    let mut rng = rng(21);
    for trial in 0..100 {
        let m = random_matrix(&mut rng, 100, 32);
        let k = 1 + trial % 32;
        let model = pca::fit(&m, k).unwrap();
        let oracle = covariance_eigenvectors(&m);
        let gap = component_mismatch(model.components(), &oracle);
        assert!(gap < 1e-8, "trial {trial}, k {k}: entrywise gap {gap:e}");
    }
}

#[test]
fn full_rank_pca_reconstructs() {
    let mut rng = rng(22);
    for _ in 0..10 {
        let m = random_matrix(&mut rng, 100, 32);
        let model = pca::fit(&m, 32).unwrap();
        let err = frobenius(&(model.reconstruct(&m).unwrap() - &m)) / frobenius(&m);
        assert!(err < 1e-9, "relative error {err:e}");
    }
}

#[test]
fn pca_residual_is_orthogonal() {
    let mut rng = rng(23);
    let m = random_matrix(&mut rng, 60, 20);
    let model = pca::fit(&m, 4).unwrap();
    let residual = &m - &model.reconstruct(&m).unwrap();
    let inner = residual.dot(&model.components().t());
    assert!(inner.iter().all(|v| v.abs() < 1e-10));
    // points already in the affine span are fixed
    let inside: Array2<f64> = model.reconstruct(&m).unwrap();
    let again = model.reconstruct(&inside).unwrap();
    assert!((again - &inside).iter().all(|v| v.abs() < 1e-10));
}
