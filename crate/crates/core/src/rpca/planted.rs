//! Synthetic matrices with a known low-rank plus sparse (or noise) split.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::DenseMatrix;

pub struct Planted {
    pub matrix: DenseMatrix,
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
}

/// Gaussian factor product of the given rank.
pub fn low_rank<R: Rng + ?Sized>(rows: usize, cols: usize, rank: usize, rng: &mut R) -> DenseMatrix {
    let mut left = DenseMatrix::zeros(rows, rank);
    let mut right = DenseMatrix::zeros(rank, cols);
    for v in left.as_mut_slice() {
        *v = rng.sample(StandardNormal);
    }
    for v in right.as_mut_slice() {
        *v = rng.sample(StandardNormal);
    }
    left.matmul(&right)
}

/// Low-rank matrix plus spikes of `±magnitude` on a uniformly random
/// support covering `density` of the entries.
pub fn spiked<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rank: usize,
    density: f64,
    magnitude: f64,
    rng: &mut R,
) -> Planted {
    let low_rank = low_rank(rows, cols, rank, rng);
    let total = rows * cols;
    let count = (density * total as f64).round() as usize;
    let support = rand::seq::index::sample(rng, total, count);
    let mut sparse = DenseMatrix::zeros(rows, cols);
    for idx in support.iter() {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        sparse.as_mut_slice()[idx] = sign * magnitude;
    }
    Planted {
        matrix: low_rank.add(&sparse),
        low_rank,
        sparse,
    }
}

/// Low-rank signal of the given per-entry scale plus independent Gaussian
/// noise columns, column `j` having per-entry variance `variances[j] / rows`
/// (so its expected squared norm is `variances[j]`).
pub fn noisy_columns<R: Rng + ?Sized>(
    rows: usize,
    variances: &[f64],
    rank: usize,
    signal_scale: f64,
    rng: &mut R,
) -> Planted {
    let cols = variances.len();
    let low_rank = if rank == 0 {
        DenseMatrix::zeros(rows, cols)
    } else {
        low_rank(rows, cols, rank, rng).scale(signal_scale)
    };
    let stds: Vec<f64> = variances.iter().map(|v| (v / rows as f64).sqrt()).collect();
    let mut sparse = DenseMatrix::zeros(rows, cols);
    for r in 0..rows {
        for (dst, sd) in sparse.row_mut(r).iter_mut().zip(&stds) {
            let z: f64 = rng.sample(StandardNormal);
            *dst = sd * z;
        }
    }
    Planted {
        matrix: low_rank.add(&sparse),
        low_rank,
        sparse,
    }
}
