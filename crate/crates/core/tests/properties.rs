use proptest::prelude::*;

use spikerul::dataset::{build_rul_labels, fit_scaler, inverse_transform, transform};
use spikerul::ensemble::{fit_blend, fit_forest, fit_gbm, BlendMethod, FeatureMatrix, ForestConfig, GbmConfig};
use spikerul::features::{extract_features, spearman_abs, Channel, FeatureVector, VibrationWindow};
use spikerul::metrics::{mae, mape, phm_accuracy, r2, rmse};
use spikerul::onset::{detect, validate_spikes, SpikeConfig};

/// Index-by-index spike validation: i is kept when it lies in a window of
/// `d_min` consecutive exceedances.
fn naive_validated(pred: &[f64], theta: f64, d_min: usize) -> Vec<usize> {
    let n = pred.len();
    let mut out = Vec::new();
    for i in 0..n {
        let mut ok = false;
        for s in i.saturating_sub(d_min - 1)..=i {
            if s + d_min <= n && (s..s + d_min).all(|j| pred[j] > theta) {
                ok = true;
            }
        }
        if ok {
            out.push(i);
        }
    }
    out
}

fn flat(v: &spikerul::onset::SpikeValidation) -> Vec<usize> {
    v.runs.iter().flat_map(|r| r.clone()).collect()
}

fn rows_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-50.0f64..50.0, -5.0f64..5.0), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scaler_round_trip(rows in rows_strategy(2..40)) {
        let fvs: Vec<FeatureVector> = rows
            .iter()
            .map(|(a, b)| FeatureVector::from_pairs([("a".to_string(), *a), ("b".to_string(), *b)]))
            .collect();
        let params = fit_scaler(&fvs).unwrap();
        let scaled = transform(&fvs, &params).unwrap();
        let back = transform(&inverse_transform(&scaled, &params).unwrap(), &params).unwrap();
        for (s, b) in scaled.iter().zip(&back) {
            for name in ["a", "b"] {
                if params.get(name).unwrap().is_degenerate() {
                    continue;
                }
                let (x, y) = (s.get(name).unwrap(), b.get(name).unwrap());
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
        for s in &scaled {
            for name in ["a", "b"] {
                let v = s.get(name).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn scaler_ignores_row_order(rows in rows_strategy(2..30), rot in 0usize..30) {
        let fvs: Vec<FeatureVector> = rows
            .iter()
            .map(|(a, b)| FeatureVector::from_pairs([("a".to_string(), *a), ("b".to_string(), *b)]))
            .collect();
        let mut shuffled = fvs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        prop_assert_eq!(fit_scaler(&fvs).unwrap(), fit_scaler(&shuffled).unwrap());
    }

    #[test]
    fn label_endpoints(total in 1u64..500, frac in 0.0f64..1.0) {
        let fpt = ((total as f64) * frac) as u64 % total;
        let l = build_rul_labels(total, fpt).unwrap();
        prop_assert_eq!(l.at(0), Some(total as f64));
        prop_assert_eq!(l.at(total), Some(0.0));
    }

    #[test]
    fn spearman_monotone_invariance(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let base = spearman_abs(&x, &y).unwrap().abs_rho;
        let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let ty: Vec<f64> = y.iter().map(|v| -3.0 * v + 1.0).collect();
        let t = spearman_abs(&tx, &ty).unwrap().abs_rho;
        prop_assert!((base - t).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
    }

    #[test]
    fn window_scale_behavior(
        samples in prop::collection::vec(-3.0f64..3.0, 16..128),
        c in 0.01f64..100.0
    ) {
        prop_assume!(samples.iter().any(|v| v.abs() > 1e-3));
        let a = extract_features(&VibrationWindow::new(samples.clone(), 1000.0, Channel::V).unwrap(), 8).unwrap();
        let scaled: Vec<f64> = samples.iter().map(|v| v * c).collect();
        let b = extract_features(&VibrationWindow::new(scaled, 1000.0, Channel::V).unwrap(), 8).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-300);
        prop_assert!(rel(b.get("RMS_V").unwrap(), c * a.get("RMS_V").unwrap()) < 1e-9);
        for name in ["CrestFactor_V", "Skewness_V", "Kurtosis_V"] {
            let (x, y) = (a.get(name).unwrap(), b.get(name).unwrap());
            prop_assert!(rel(x, y) < 1e-9 || (x - y).abs() < 1e-9, "{name}: {x} vs {y}");
        }
    }

    #[test]
    fn band_powers_sum_to_signal_energy(samples in prop::collection::vec(-3.0f64..3.0, 16..200)) {
        prop_assume!(samples.iter().any(|v| v.abs() > 1e-3));
        let f = extract_features(&VibrationWindow::new(samples.clone(), 1000.0, Channel::H).unwrap(), 8).unwrap();
        let bands: f64 = ["BandPower_Low_H", "BandPower_Mid_H", "BandPower_High_H"]
            .iter()
            .map(|n| f.get(n).unwrap())
            .sum();
        let energy: f64 = samples.iter().map(|v| v * v).sum();
        prop_assert!((bands - energy).abs() <= 1e-6 * energy);
    }

    #[test]
    fn validation_matches_naive(
        pred in prop::collection::vec(-1.0f64..1.0, 0..120),
        theta in -1.0f64..1.0,
        d_min in 1usize..10
    ) {
        prop_assert_eq!(flat(&validate_spikes(&pred, theta, d_min)), naive_validated(&pred, theta, d_min));
    }

    #[test]
    fn monotone_in_k_and_d_min(
        pred in prop::collection::vec(0.0f64..1.0, 40..150),
        k in 0.0f64..3.0,
        dk in 0.0f64..2.0,
        d in 1usize..8,
        dd in 0usize..5
    ) {
        let base = SpikeConfig { k_sigma: k, d_min: d, ..SpikeConfig::default() };
        let a = detect(&pred, &base).unwrap();
        let b = detect(&pred, &SpikeConfig { k_sigma: k + dk, ..base.clone() }).unwrap();
        let c = detect(&pred, &SpikeConfig { d_min: d + dd, ..base.clone() }).unwrap();
        for sub in [&b, &c] {
            prop_assert!(sub.spike_indices.iter().all(|i| a.spike_indices.contains(i)));
            if let (Some(x), Some(y)) = (a.onset, sub.onset) {
                prop_assert!(x <= y);
            }
        }
        // fallback totality
        for r in [&a, &b, &c] {
            prop_assert!(!r.regression_range().is_empty());
        }
    }

    #[test]
    fn metric_inequalities_and_permutation(
        pairs in prop::collection::vec((0.01f64..1.0, -0.5f64..1.5), 2..60),
        rot in 0usize..60
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assert!(mae(&y, &p).unwrap() <= rmse(&y, &p).unwrap() + 1e-15);
        let k = rot % y.len();
        let (mut y2, mut p2) = (y.clone(), p.clone());
        y2.rotate_left(k);
        p2.rotate_left(k);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        prop_assert!(close(mae(&y, &p).unwrap(), mae(&y2, &p2).unwrap()));
        prop_assert!(close(rmse(&y, &p).unwrap(), rmse(&y2, &p2).unwrap()));
        prop_assert!(close(mape(&y, &p, 1e-8).unwrap(), mape(&y2, &p2, 1e-8).unwrap()));
        if let (Ok(a), Ok(b)) = (r2(&y, &p), r2(&y2, &p2)) {
            prop_assert!(close(a, b));
            prop_assert!(a <= 1.0);
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        if let Ok(v) = r2(&y, &vec![mean; y.len()]) {
            prop_assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn phm_branches(e in 0.0f64..200.0) {
        // strictly decreasing along each branch, equal scores at 4x early
        prop_assert!(phm_accuracy(-e - 0.5) < phm_accuracy(-e));
        prop_assert!(phm_accuracy(e + 0.5) < phm_accuracy(e));
        prop_assert!((phm_accuracy(-e) - phm_accuracy(4.0 * e)).abs() < 1e-12);
        prop_assert!(phm_accuracy(e) > 0.0 && phm_accuracy(-e) <= 1.0);
    }
}

fn random_dataset(seed: u64, n: usize, m: usize) -> (FeatureMatrix, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| r[0].sin() + 0.5 * r[1 % m] * r[0] + rng.random_range(-0.1..0.1))
        .collect();
    let schema = (0..m).map(|i| format!("f{i}")).collect();
    (FeatureMatrix::from_rows(schema, &rows).unwrap(), y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forest_prediction_is_tree_mean(seed in 0u64..1000) {
        let (x, y) = random_dataset(seed, 60, 3);
        let f = fit_forest(&x, &y, &ForestConfig { n_trees: 6, seed, ..ForestConfig::default() }).unwrap();
        prop_assert_eq!(f.trees.len(), 6);
        for i in 0..x.n_rows() {
            let s: f64 = f.trees.iter().map(|t| t.predict_row(x.row(i))).sum();
            prop_assert_eq!(f.predict_row(x.row(i)), s / 6.0);
        }
        for t in &f.trees {
            prop_assert!(t.leaves().all(|(_, n)| n >= 2));
        }
    }

    #[test]
    fn gbm_loss_non_increasing(seed in 0u64..1000, lr in 0.01f64..0.1) {
        let (x, y) = random_dataset(seed, 80, 4);
        let g = fit_gbm(&x, &y, &GbmConfig { n_rounds: 40, learning_rate: lr, seed, ..GbmConfig::default() }).unwrap();
        prop_assert!(g.train_loss.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn blend_beats_both_experts(
        triples in prop::collection::vec((0.0f64..1.0, -0.3f64..0.3, -0.3f64..0.3), 2..80)
    ) {
        let y: Vec<f64> = triples.iter().map(|t| t.0).collect();
        let a: Vec<f64> = triples.iter().map(|t| t.0 + t.1).collect();
        let b: Vec<f64> = triples.iter().map(|t| t.0 + t.2).collect();
        let blend = fit_blend(&a, &b, &y, BlendMethod::Grid).unwrap();
        let mse = |p: &[f64]| p.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / y.len() as f64;
        prop_assert!(blend.validation_mse <= mse(&a).min(mse(&b)) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&blend.alpha));
    }

    #[test]
    fn unbootstrapped_tree_ignores_row_order(seed in 0u64..1000, rot in 1usize..59) {
        let (x, y) = random_dataset(seed, 60, 3);
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, features_per_split: Some(3), seed, ..ForestConfig::default() };
        let a = fit_forest(&x, &y, &cfg).unwrap();
        let mut order: Vec<usize> = (0..60).collect();
        order.rotate_left(rot);
        let x2 = x.select(&order);
        let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let b = fit_forest(&x2, &y2, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fits_are_deterministic(seed in 0u64..1000) {
        let (x, y) = random_dataset(seed, 50, 3);
        let fc = ForestConfig { n_trees: 4, seed, ..ForestConfig::default() };
        prop_assert_eq!(fit_forest(&x, &y, &fc).unwrap(), fit_forest(&x, &y, &fc).unwrap());
        let gc = GbmConfig { n_rounds: 10, seed, features_per_split: Some(2), ..GbmConfig::default() };
        prop_assert_eq!(fit_gbm(&x, &y, &gc).unwrap(), fit_gbm(&x, &y, &gc).unwrap());
    }
}
