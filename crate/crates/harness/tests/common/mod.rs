#![allow(dead_code)]

pub mod sinkhorn;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use reconfig_core::noise::random_rotation;
use reconfig_core::{GaussianState, Matrix, QuadraticTask, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// `R diag(eigs) R^T` for a Haar rotation `R`.
pub fn rotated(rng: &mut ChaCha8Rng, eigs: &[f64]) -> Matrix {
    let r = random_rotation(eigs.len(), rng);
    &r * Matrix::from_diagonal(&Vector::from_row_slice(eigs)) * r.transpose()
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Matrix {
    let eigs: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..hi)).collect();
    rotated(rng, &eigs)
}

pub fn random_state(rng: &mut ChaCha8Rng, d: usize) -> GaussianState {
    GaussianState::new(gaussian_vector(rng, d), random_spd(rng, d, 0.2, 2.0)).unwrap()
}

pub fn random_task(rng: &mut ChaCha8Rng, d: usize) -> QuadraticTask {
    QuadraticTask::new("t", random_spd(rng, d, 0.3, 3.0), gaussian_vector(rng, d)).unwrap()
}

