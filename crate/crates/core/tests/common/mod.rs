//! Random instance builders shared by the property tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssc_core::linsolve::{spectral_abscissa, Mat, C64};
use ssc_core::systems::Plant;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uni(r: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| r.gen_range(-s..=s))
}

/// Random matrix shifted so its spectral abscissa is `-margin`.
pub fn hurwitz(r: &mut ChaCha8Rng, n: usize, margin: f64) -> Mat {
    let a = uni(r, n, n, 1.0);
    let s = spectral_abscissa(&a).unwrap();
    a - Mat::identity(n, n) * (s + margin)
}

pub fn eig(m: &Mat) -> Vec<C64> {
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn separation(a: &Mat, b: &Mat) -> f64 {
    let (ea, eb) = (eig(a), eig(b));
    ea.iter()
        .flat_map(|x| eb.iter().map(move |y| (x - y).norm()))
        .fold(f64::INFINITY, f64::min)
}

/// Distinct oscillators (plus a zero eigenvalue when `nu` is odd) in
/// random coordinates.
pub fn neutral(r: &mut ChaCha8Rng, nu: usize, w_lo: f64) -> Mat {
    let mut j = Mat::zeros(nu, nu);
    let mut w = w_lo + r.gen_range(0.0..0.2);
    let mut i = nu % 2;
    while i < nu {
        j[(i, i + 1)] = w;
        j[(i + 1, i)] = -w;
        w += 0.4 + r.gen_range(0.0..0.4);
        i += 2;
    }
    let v = Mat::identity(nu, nu) + uni(r, nu, nu, 0.3);
    &v * j * v.try_inverse().unwrap()
}

pub fn random_plant(r: &mut ChaCha8Rng, n: usize, m: usize, p: usize, margin: f64) -> Plant {
    let a = hurwitz(r, n, margin);
    let d = if r.gen_bool(0.5) {
        uni(r, p, m, 1.0)
    } else {
        Mat::zeros(p, m)
    };
    Plant::new(a, uni(r, n, m, 1.0), uni(r, p, n, 1.0), d).unwrap()
}

pub fn rel_gap(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}
