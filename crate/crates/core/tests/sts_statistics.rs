//! Monte-Carlo checks of the texture generator against bands computed by an
//! independent implementation of the same recursion.

use inspect_core::sts::{generate_global_defect, generate_nominal, lag1_horizontal, StsParams};

fn lag1_over(n: u64, f: impl Fn(u64) -> Vec<f64>, size: usize) -> (f64, f64) {
    let r: Vec<f64> = (0..n).map(|k| lag1_horizontal(&f(k), size)).collect();
    let mean = r.iter().sum::<f64>() / n as f64;
    let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    (mean, sd)
}

#[test]
fn nominal_fingerprint_band() {
    let params = StsParams::default();
    let (mean, sd) = lag1_over(100, |k| generate_nominal(&params, k).unwrap().pixels, params.size);
    assert!((0.770..=0.786).contains(&mean), "mean lag-1 {mean}");
    assert!(sd < 0.02, "sd {sd}");
}

#[test]
fn global_defect_lowers_lag1() {
    let params = StsParams::default();
    let (n, _) = lag1_over(30, |k| generate_nominal(&params, k).unwrap().pixels, params.size);
    let (g, _) = lag1_over(30, |k| generate_global_defect(&params, k).unwrap().pixels, params.size);
    assert!(g < n - 0.05, "global {g} vs nominal {n}");
}

#[test]
fn white_noise_has_no_lag1() {
    let params = StsParams {
        phi1: 0.0,
        phi2: 0.0,
        ..StsParams::default()
    };
    let bound = 3.0 / (params.size as f64);
    for seed in 0..10 {
        let r = lag1_horizontal(&generate_nominal(&params, seed).unwrap().pixels, params.size);
        assert!(r.abs() < bound, "seed {seed}: {r}");
    }
}
