//! Helpers shared by the integration tests. Oracles here are written
//! independently of the library internals.
#![allow(dead_code)]

use std::f64::consts::PI;

use ecf_core::{Boundary, GridField, GridSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn square(n: usize) -> GridSpec {
    GridSpec::unit_square(n, Boundary::Periodic).unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, grid: GridSpec, channels: usize) -> GridField {
    let values = (0..grid.len() * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    GridField::new(grid, channels, values).unwrap()
}

/// `(1/N) sum_j u_j exp(-2 pi i k.j/n)` by direct summation, row-major bins.
pub fn brute_dft(values: &[f64], shape: &[usize]) -> Vec<Complex64> {
    let (n0, n1) = (shape[0], shape.get(1).copied().unwrap_or(1));
    let n = (n0 * n1) as f64;
    let mut out = Vec::with_capacity(n0 * n1);
    for k0 in 0..n0 {
        for k1 in 0..n1 {
            let mut acc = Complex64::new(0.0, 0.0);
            for j0 in 0..n0 {
                for j1 in 0..n1 {
                    let phase = -2.0 * PI * ((k0 * j0) as f64 / n0 as f64 + (k1 * j1) as f64 / n1 as f64);
                    acc += values[j0 * n1 + j1] * Complex64::from_polar(1.0, phase);
                }
            }
            out.push(acc / n);
        }
    }
    out
}

/// `sqrt(cell_volume * sum (a-b)^2)` over all channels.
pub fn l2_distance(a: &GridField, b: &GridField) -> f64 {
    let dv = a.grid().cell_volume();
    (dv * a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
