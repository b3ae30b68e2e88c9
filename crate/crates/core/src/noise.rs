//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream, step)`, so any step of any
//! realization can be replayed without generating the ones before it.

use nalgebra::linalg::QR;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::spectral::{Matrix, Vector};

/// Words reserved per step inside one ChaCha stream.
const WORDS_PER_STEP_LOG2: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        NoiseStream { seed, stream }
    }

    /// Generator positioned at the start of `step`'s block.
    pub fn rng_at(&self, step: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(u128::from(step) << WORDS_PER_STEP_LOG2);
        rng
    }

    /// Standard normal vector for `step`.
    pub fn normal(&self, step: u64, dim: usize) -> Vector {
        let mut rng = self.rng_at(step);
        Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng))
    }
}

/// Two streams per realization: even ids seed initial conditions, odd ids
/// drive the per-step noise.
pub fn realization_streams(master_seed: u64, index: u64) -> (NoiseStream, NoiseStream) {
    (
        NoiseStream::new(master_seed, 2 * index),
        NoiseStream::new(master_seed, 2 * index + 1),
    )
}

/// SplitMix64 finalizer, for deriving child seeds from a parent seed.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    let mut z = parent
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Haar-distributed orthogonal matrix.
pub fn random_rotation<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut *rng));
    let qr = QR::new(g);
    let mut q = qr.q();
    let r = qr.r();
    // Sign-fix so the distribution is exactly Haar.
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
