//! Seeded generators. Every generator takes its RNG explicitly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::hilbert::{Ket, C64};

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Haar-random pure state (normalized complex Gaussian vector).
pub fn random_ket(dim: usize, rng: &mut SeededRng) -> Ket {
    let v: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    Ket::from_vec(v).normalized().expect("gaussian vector has nonzero norm")
}

/// Random real unit vector.
pub fn random_real_ket(dim: usize, rng: &mut SeededRng) -> Ket {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    Ket::from_real(&v)
        .normalized()
        .expect("gaussian vector has nonzero norm")
}

/// Entries uniform in `[-scale, scale]`, then `(M + Mᵀ)/2`.
pub fn random_real_symmetric(dim: usize, scale: f64, rng: &mut SeededRng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| {
        if scale > 0.0 {
            rng.random_range(-scale..=scale)
        } else {
            0.0
        }
    });
    let mut s = (&m + m.transpose()) * 0.5;
    // Enforce bitwise symmetry regardless of rounding in the sum.
    for i in 0..dim {
        for j in 0..i {
            s[(i, j)] = s[(j, i)];
        }
    }
    s
}
