//! Fine samples follow the piecewise-constant density of the coarse weights.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semnerf::render::{importance_samples, stratified_samples, Ray, SampleSet, PDF_EPSILON};

fn setup(seed: u64) -> (SampleSet, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ray = Ray::new(Vector3::zeros(), Vector3::z(), 0.1, 10.0).unwrap();
    let coarse = stratified_samples(&ray, 16, true, &mut rng).unwrap();
    // Peaked weights with a few empty bins.
    let weights = (0..16)
        .map(|i| if i % 5 == 2 { 0.0 } else { rng.random_range(0.0..1.0f64).powi(3) })
        .collect();
    (coarse, weights)
}

/// Analytic CDF of the sampling density at `x`.
fn cdf(coarse: &SampleSet, weights: &[f64], x: f64) -> f64 {
    let n = weights.len();
    let width = (coarse.t_far - coarse.t_near) / n as f64;
    let total: f64 = weights.iter().map(|w| w + PDF_EPSILON).sum();
    let pos = ((x - coarse.t_near) / width).clamp(0.0, n as f64);
    let bin = (pos.floor() as usize).min(n - 1);
    let below: f64 = weights[..bin].iter().map(|w| w + PDF_EPSILON).sum();
    (below + (pos - bin as f64) * (weights[bin] + PDF_EPSILON)) / total
}

/// Fine draws only: the merged set minus one copy of each coarse sample.
fn fine_only(merged: &SampleSet, coarse: &SampleSet) -> Vec<f64> {
    let mut rest = merged.t.clone();
    for t in &coarse.t {
        let i = rest.iter().position(|x| x == t).expect("coarse sample kept");
        rest.remove(i);
    }
    rest
}

fn ks_statistic(sorted: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = f(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn random_draws_pass_kolmogorov_smirnov() {
    for seed in 0..5 {
        let (coarse, weights) = setup(seed);
        let n = 20_000;
        let merged = importance_samples(&coarse, &weights, n, true, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
        assert_eq!(merged.len(), coarse.len() + n);
        assert!(merged.t.windows(2).all(|w| w[0] <= w[1]));
        let fine = fine_only(&merged, &coarse);
        let d = ks_statistic(&fine, |x| cdf(&coarse, &weights, x));
        // Critical value at α = 0.001.
        let critical = 1.949 / (n as f64).sqrt();
        assert!(d < critical, "seed {seed}: D = {d} >= {critical}");
    }
}

#[test]
fn deterministic_draws_sit_on_quantiles() {
    let (coarse, weights) = setup(9);
    let n = 64;
    let merged = importance_samples(&coarse, &weights, n, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let fine = fine_only(&merged, &coarse);
    for (i, x) in fine.iter().enumerate() {
        let expected = (i as f64 + 0.5) / n as f64;
        assert!((cdf(&coarse, &weights, *x) - expected).abs() < 1e-9, "quantile {i}");
    }
}

#[test]
fn all_zero_weights_sample_uniformly() {
    let (coarse, _) = setup(3);
    let zeros = vec![0.0; 16];
    let merged = importance_samples(&coarse, &zeros, 10_000, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let fine = fine_only(&merged, &coarse);
    let d = ks_statistic(&fine, |x| (x - coarse.t_near) / (coarse.t_far - coarse.t_near));
    assert!(d < 1.949 / 100.0, "D = {d}");
}
