mod common;

use common::{brute_force_auc, loop_psnr, rng};
use proptest::prelude::*;
use psae_core::evaluation::{roc_auc, roc_curve, trapezoid_area};
use psae_core::scoring::{normalize_scores, psnr, psnr_from_mse};
use rand::Rng;

fn random_instance(r: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let n = r.random_range(2..=1000);
    // coarse levels force plenty of ties
    let levels = r.random_range(2..=50);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}

#[test]
fn auc_equals_pair_counting_exactly() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let (s, l) = random_instance(&mut r);
        assert_eq!(roc_auc(&s, &l).unwrap(), brute_force_auc(&s, &l));
    }
}

#[test]
fn auc_equals_trapezoid_under_full_curve() {
    let mut r = rng(8);
    for _ in 0..20 {
        let (s, l) = random_instance(&mut r);
        let area = trapezoid_area(&roc_curve(&s, &l).unwrap());
        assert!((area - roc_auc(&s, &l).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn psnr_matches_scalar_loop() {
    let mut r = rng(3);
    for _ in 0..50 {
        let n = r.random_range(1..5000);
        let a: Vec<f32> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let scale = r.random_range(0.0..0.5f32);
        let b: Vec<f32> = a.iter().map(|v| (v + scale * r.random_range(-1.0..1.0f32)).clamp(0.0, 1.0)).collect();
        assert!((psnr(&a, &b).unwrap() - loop_psnr(&a, &b)).abs() < 1e-6);
    }
    assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
}

#[test]
fn psnr_strictly_decreases_with_mse() {
    let grid: Vec<f64> = (0..200).map(|i| 1e-9 * 1.1f64.powi(i)).collect();
    for w in grid.windows(2) {
        assert!(psnr_from_mse(w[1]) < psnr_from_mse(w[0]));
    }
}

proptest! {
    #[test]
    fn normalized_scores_lie_in_unit_interval(p in prop::collection::vec(0.0f64..100.0, 1..200)) {
        let s = normalize_scores(&p).unwrap();
        prop_assert_eq!(s.len(), p.len());
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        let distinct = p.iter().any(|&v| v != p[0]);
        if distinct {
            prop_assert!(s.contains(&0.0));
            prop_assert!(s.contains(&1.0));
        } else {
            prop_assert!(s.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn normalization_ignores_positive_affine_maps(
        p in prop::collection::vec(0.0f64..100.0, 2..100),
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let s = normalize_scores(&p).unwrap();
        let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        let t = normalize_scores(&q).unwrap();
        for (x, y) in s.iter().zip(&t) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn auc_flips_under_negation(s in prop::collection::hash_set(0u32..100_000, 4..200), seed in any::<u64>()) {
        let scores: Vec<f64> = s.into_iter().map(|v| v as f64).collect();
        let mut r = rng(seed);
        let mut labels: Vec<bool> = scores.iter().map(|_| r.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
        let a = roc_auc(&scores, &labels).unwrap();
        let b = roc_auc(&neg, &labels).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_maps(scores in prop::collection::vec(-5.0f64..5.0, 4..200), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut labels: Vec<bool> = scores.iter().map(|_| r.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let mapped: Vec<f64> = scores.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&mapped, &labels).unwrap());
    }
}

#[test]
fn single_class_is_an_error() {
    assert!(roc_auc(&[0.1, 0.2, 0.3], &[false, false, false]).is_err());
    assert!(normalize_scores(&[]).is_err());
}
