//! Shared helpers for integration tests: finite-difference oracles and
//! random tensor construction.

#![allow(dead_code)]

use rinv::numerics::{RngStream, Tensor};

/// Central finite differences of a scalar function at `x0`.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + h;
        let up = f(&x);
        x[i] = x0[i] - h;
        let down = f(&x);
        x[i] = x0[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Max absolute deviation normalized by the largest reference magnitude.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);
    got.iter()
        .zip(want)
        .fold(0.0f64, |acc, (g, w)| acc.max((g - w).abs()))
        / scale
}

pub fn rand_vec(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

pub fn rand_tensor(rng: &mut RngStream, shape: &[usize], requires_grad: bool) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::leaf(shape, rand_vec(rng, n), requires_grad).unwrap()
}

/// Random rowwise unit-norm matrix as a plain vec.
pub fn rand_unit_rows(rng: &mut RngStream, n: usize, d: usize) -> Vec<f64> {
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        loop {
            let row: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-3 {
                for j in 0..d {
                    data[i * d + j] = row[j] / norm;
                }
                break;
            }
        }
    }
    data
}

pub fn rand_unit_tensor(
    rng: &mut RngStream,
    n: usize,
    d: usize,
    requires_grad: bool,
) -> Tensor<f64> {
    Tensor::leaf(&[n, d], rand_unit_rows(rng, n, d), requires_grad).unwrap()
}
