//! Worked values checked against independent reference computations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spikerul::dataset::{build_rul_labels, generate_synthetic, RunSeries, SynthConfig};
use spikerul::ensemble::{fit_blend, fit_forest, BlendMethod, FeatureMatrix, ForestConfig};
use spikerul::features::{
    extract_features, post_onset_features, rank_features, spearman_abs, Channel, PostOnsetParams,
    VibrationWindow,
};
use spikerul::forecaster::{init_model, ForecasterConfig};
use spikerul::metrics::{mae, mape, r2, rmse};

#[test]
fn labels_against_loop() {
    let l = build_rul_labels(100, 0).unwrap();
    for t in 0..=100u64 {
        assert_eq!(l.at(t), Some(100.0 - t as f64));
    }
    let (total, fpt) = (10u64, 5u64);
    let l = build_rul_labels(total, fpt).unwrap();
    for t in 0..=total {
        let mut y = total as f64;
        if t > fpt {
            let frac = (t - fpt) as f64 / (total - fpt) as f64;
            y -= total as f64 * frac;
        }
        assert!((l.at(t).unwrap() - y).abs() < 1e-12);
    }
    assert!((l.at(7).unwrap() - 6.0).abs() < 1e-12);
}

#[test]
fn generator_second_half_is_higher() {
    for seed in 0..10 {
        let cfg = SynthConfig {
            length: 200,
            onset: 100,
            noise_seed: seed,
            ..SynthConfig::default()
        };
        let (run, onset) = generate_synthetic(&cfg).unwrap();
        assert_eq!(onset, 100);
        let x = run.column(&cfg.indicator_name).unwrap();
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        assert!(mean(&x[100..]) > mean(&x[..100]));
    }
}

#[test]
fn generator_degenerate_is_constant() {
    let cfg = SynthConfig {
        baseline_std: 0.0,
        spike_amplitude: 0.0,
        growth_rate: 0.0,
        ..SynthConfig::default()
    };
    let (run, _) = generate_synthetic(&cfg).unwrap();
    let x = run.column(&cfg.indicator_name).unwrap();
    assert!(x.iter().all(|&v| v == cfg.baseline_mean));
}

/// Direct O(N^2) DFT power per band, with the same one-sided weighting.
fn dft_band_powers(x: &[f64]) -> [f64; 3] {
    let n = x.len();
    let half = n / 2;
    let mut bands = [0.0; 3];
    for k in 0..=half {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in x.iter().enumerate() {
            let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        let w = if k == 0 || k == half { 1.0 } else { 2.0 };
        let p = w * (re * re + im * im) / n as f64;
        let frac = k as f64 / half as f64;
        let b = if frac < 1.0 / 3.0 {
            0
        } else if frac < 2.0 / 3.0 {
            1
        } else {
            2
        };
        bands[b] += p;
    }
    bands
}

#[test]
fn mid_band_sine() {
    let n = 64;
    let x: Vec<f64> = (0..n)
        .map(|j| (2.0 * std::f64::consts::PI * 16.0 * j as f64 / n as f64).sin())
        .collect();
    let f = extract_features(&VibrationWindow::new(x.clone(), 64.0, Channel::H).unwrap(), 8).unwrap();
    let oracle = dft_band_powers(&x);
    let got = [
        f.get("BandPower_Low_H").unwrap(),
        f.get("BandPower_Mid_H").unwrap(),
        f.get("BandPower_High_H").unwrap(),
    ];
    for (g, o) in got.iter().zip(&oracle) {
        assert!((g - o).abs() < 1e-9 * o.abs().max(1.0), "{got:?} vs {oracle:?}");
    }
    assert!(got[1] > got[0] && got[1] > got[2]);
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spearman_with_ties() {
    let x = [1.0, 2.0, 2.0, 3.0];
    let y = [1.0, 3.0, 2.0, 4.0];
    let want = pearson(&brute_ranks(&x), &brute_ranks(&y)).abs();
    assert!((spearman_abs(&x, &y).unwrap().abs_rho - want).abs() < 1e-12);
    let dec: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((spearman_abs(&[1.0, 2.0, 3.0, 4.0], &[9.0, 7.0, 5.0, 1.0]).unwrap().abs_rho - 1.0).abs() < 1e-12);
    assert!((spearman_abs(&x, &dec).unwrap().abs_rho - 1.0).abs() < 1e-12);
}

fn run_with(columns: &[(&str, Vec<f64>)]) -> RunSeries {
    let n = columns[0].1.len();
    let schema = columns.iter().map(|c| c.0.to_string()).collect();
    let values = (0..n).map(|i| columns.iter().map(|c| c.1[i]).collect()).collect();
    RunSeries::new("r", schema, (0..n as u64).collect(), values).unwrap()
}

#[test]
fn ranking_prefers_rul_linked_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 300u64;
    let a: Vec<f64> = (0..=n).map(|t| (n - t) as f64 + rng.random_range(-1e-3..1e-3)).collect();
    let b: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = run_with(&[("B", b), ("A", a)]);
    let rep = rank_features(&[run], &[build_rul_labels(n, 0).unwrap()]).unwrap();
    assert_eq!(rep.entries[0].0, "A");
    assert!(rep.entries[0].1 > 0.99);
}

#[test]
fn ranking_null_distribution() {
    // pure-noise features at 1000 points: every |rho| < 0.2 in at least 95% of seeds
    let mut ok = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<(&str, Vec<f64>)> = ["n1", "n2", "n3"]
            .iter()
            .map(|&name| (name, (0..1000).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let run = run_with(&cols);
        let rep = rank_features(&[run], &[build_rul_labels(999, 0).unwrap()]).unwrap();
        if rep.entries.iter().all(|(_, r)| *r < 0.2) {
            ok += 1;
        }
    }
    assert!(ok >= 95, "{ok}/100");
}

#[test]
fn rolling_slope_of_affine_prediction() {
    let m = -0.37;
    let pred: Vec<f64> = (0..50).map(|t| 4.0 + m * t as f64).collect();
    let rows = post_onset_features(&pred, &pred, 10, &PostOnsetParams::default()).unwrap();
    for r in rows.iter().filter(|r| r.t >= 19) {
        assert!((r.rolling_slope - m).abs() < 1e-9);
    }
}

#[test]
fn forecaster_overfits_one_sample() {
    let cfg = ForecasterConfig {
        channels: vec![8, 8],
        seq_len: 12,
        learning_rate: 1e-2,
        ..ForecasterConfig::default()
    };
    let mut model = init_model(&cfg).unwrap();
    let window: Vec<f64> = (0..12).map(|i| (i as f64 * 0.4).sin()).collect();
    let target = 0.7;
    let mut loss = f64::INFINITY;
    for _ in 0..500 {
        model.train_step(&[(&window, target)]).unwrap();
        let e = model.forward(&window).unwrap() - target;
        loss = e * e;
        if loss < 1e-6 {
            break;
        }
    }
    assert!(loss < 1e-6, "loss {loss}");
}

#[test]
fn forest_recovers_informative_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut make = |n: usize| {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let schema = (0..4).map(|i| format!("x{i}")).collect();
        (FeatureMatrix::from_rows(schema, &rows).unwrap(), y)
    };
    let (xtr, ytr) = make(500);
    let (xte, yte) = make(200);
    let f = fit_forest(&xtr, &ytr, &ForestConfig { seed: 5, ..ForestConfig::default() }).unwrap();
    assert!(r2(&yte, &f.predict(&xte)).unwrap() > 0.9);
}

#[test]
fn symmetric_experts_blend_near_half() {
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut alphas = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
        let a: Vec<f64> = y.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let b: Vec<f64> = y.iter().map(|v| v + noise.sample(&mut rng)).collect();
        alphas.push(fit_blend(&a, &b, &y, BlendMethod::Grid).unwrap().alpha);
    }
    let mean = alphas.iter().sum::<f64>() / alphas.len() as f64;
    assert!((mean - 0.5).abs() <= 0.1, "mean alpha {mean}");
    assert!(alphas.iter().all(|a| (a - 0.5).abs() <= 0.2));
}

#[test]
fn metric_worked_values() {
    let (y, p): ([f64; 2], [f64; 2]) = ([0.0, 1.0], [1.0, 0.0]);
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for i in 0..2 {
        abs += (y[i] - p[i]).abs();
        sq += (y[i] - p[i]) * (y[i] - p[i]);
    }
    let mean = (y[0] + y[1]) / n;
    let tot = (y[0] - mean).powi(2) + (y[1] - mean).powi(2);
    assert!((mae(&y, &p).unwrap() - abs / n).abs() < 1e-12);
    assert!((rmse(&y, &p).unwrap() - (sq / n).sqrt()).abs() < 1e-12);
    assert!((r2(&y, &p).unwrap() - (1.0 - sq / tot)).abs() < 1e-12);
    assert!((r2(&y, &p).unwrap() + 3.0).abs() < 1e-12);
}

#[test]
fn mape_grows_as_target_vanishes() {
    let err = 0.01;
    let mut prev = 0.0;
    for k in 1..8 {
        let y = 10f64.powi(-k);
        let m = mape(&[y], &[y + err], 1e-8).unwrap();
        assert!((m - 100.0 * err / y).abs() < 1e-6 * m);
        assert!(m > prev);
        prev = m;
    }
}
