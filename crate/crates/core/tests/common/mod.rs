#![allow(dead_code)]

use std::path::PathBuf;

use causal_lift::eval::ExperimentConfig;
use causal_lift::linalg::{lstsq, tls};
use causal_lift::netmodel::{parse_model, NetworkModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn model(name: &str) -> NetworkModel {
    let text = std::fs::read_to_string(repo_path(&format!("models/{name}.model"))).unwrap();
    parse_model(&text).unwrap()
}

pub fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&repo_path(&format!("configs/{name}.toml"))).unwrap()
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|v| v.abs()).sum::<f64>();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Zero-order-hold discretization `[Ad Bd]` of `dx/dt = A x + B u`.
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let (n, r) = (a.nrows(), b.ncols());
    let mut m = DMatrix::zeros(n + r, n + r);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, r)).copy_from(b);
    expm(&(m * dt)).rows(0, n).clone_owned()
}

/// Errors-in-variables bias `(ols, tls)` on `x' = 0.9 x` with noise on both sides.
pub fn eiv_bias(pairs: usize, sigma: f64, seed: u64) -> (f64, f64) {
    let a_true = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let x: Vec<f64> = (0..pairs).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z = DMatrix::from_fn(pairs, 1, |i, _| x[i] + noise.sample(&mut rng));
    let y = DMatrix::from_fn(pairs, 1, |i, _| a_true * x[i] + noise.sample(&mut rng));
    let ols = lstsq(&z, &y, 0.0).unwrap().x[(0, 0)];
    let tls = tls(&z, &y).unwrap()[(0, 0)];
    (ols - a_true, tls - a_true)
}
