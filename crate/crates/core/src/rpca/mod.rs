//! Principal component pursuit and per-column noise-energy estimation.
//!
//! [`pcp_decompose`] splits a matrix `M` into a low-rank part `L` and a sparse
//! part `S` by alternating singular value thresholding and entrywise
//! shrinkage on the augmented Lagrangian:
//!
//! ```text
//! L <- D_{1/mu}(M - S + Y/mu)
//! S <- S_{lambda/mu}(M - L + Y/mu)
//! Y <- Y + mu (M - L - S)
//! ```
//!
//! For an update matrix (one column per client) the squared column norms of
//! `S` estimate each client's update-noise variance.

mod eig;
pub mod planted;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use eig::{symmetric_eigen, SymmetricEigen};

use crate::error::invalid;
use crate::{DenseMatrix, Error, Result};

/// Soft thresholding: `sgn(x) * max(|x| - tau, 0)`.
#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    let mag = x.abs() - tau;
    if mag > 0.0 {
        mag.copysign(x)
    } else {
        0.0
    }
}

/// Singular values of `m` in decreasing order.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    let gram = if m.rows() >= m.cols() {
        m.gram()
    } else {
        m.transpose().gram()
    };
    symmetric_eigen(&gram)
        .values
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect()
}

/// Singular value thresholding `U shrink(Σ, tau) Vᵀ`.
///
/// The SVD is taken through the eigendecomposition of the smaller Gram
/// matrix. With `MᵀM = V Λ Vᵀ` the thresholded matrix is `M V diag(f) Vᵀ`
/// where `f_k = max(σ_k - tau, 0) / σ_k`, so `U` is never formed.
pub fn svt(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(invalid("tau", "must be finite and nonnegative"));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svt input"));
    }
    if tau == 0.0 {
        return Ok(m.clone());
    }
    if m.rows() >= m.cols() {
        Ok(m.matmul(&spectral_filter(&m.gram(), tau)))
    } else {
        Ok(spectral_filter(&m.transpose().gram(), tau).matmul(m))
    }
}

fn spectral_filter(gram: &DenseMatrix, tau: f64) -> DenseMatrix {
    let eig = symmetric_eigen(gram);
    let n = gram.rows();
    let gains: Vec<f64> = eig
        .values
        .iter()
        .map(|&lambda| {
            let sigma = lambda.max(0.0).sqrt();
            if sigma > tau {
                (sigma - tau) / sigma
            } else {
                0.0
            }
        })
        .collect();
    let v = &eig.vectors;
    let mut p = DenseMatrix::zeros(n, n);
    for (k, &g) in gains.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = g * v.get(i, k);
            for j in 0..n {
                let cur = p.get(i, j);
                p.set(i, j, cur + vik * v.get(j, k));
            }
        }
    }
    p
}

/// A PCP parameter that is either derived from the input or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tuning {
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcpConfig {
    /// Weight of the entrywise l1 term; auto is `1/sqrt(max(rows, cols))`.
    pub lambda: Tuning,
    /// Augmented-Lagrangian penalty; auto is `rows*cols / (4 ||M||_1)`.
    pub mu: Tuning,
    /// Stop once `||M - L - S||_F <= tol ||M||_F`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PcpConfig {
    fn default() -> Self {
        PcpConfig {
            lambda: Tuning::Auto,
            mu: Tuning::Auto,
            tol: 1e-7,
            max_iters: 500,
        }
    }
}

impl PcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if let Tuning::Fixed(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return Err(invalid("lambda", "must be positive"));
            }
        }
        if let Tuning::Fixed(mu) = self.mu {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(invalid("mu", "must be positive"));
            }
        }
        Ok(())
    }

    fn resolve(&self, m: &DenseMatrix) -> (f64, f64) {
        let (rows, cols) = m.shape();
        let lambda = match self.lambda {
            Tuning::Auto => 1.0 / (rows.max(cols) as f64).sqrt(),
            Tuning::Fixed(l) => l,
        };
        let mu = match self.mu {
            Tuning::Auto => (rows * cols) as f64 / (4.0 * m.l1_norm()),
            Tuning::Fixed(mu) => mu,
        };
        (lambda, mu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
    pub iters_used: usize,
    pub final_residual: f64,
    /// False when `max_iters` ran out before the residual reached `tol`.
    /// The decomposition is still usable.
    pub converged: bool,
    pub lambda: f64,
    pub mu: f64,
}

pub fn pcp_decompose(m: &DenseMatrix, cfg: &PcpConfig) -> Result<Decomposition> {
    pcp_decompose_traced(m, cfg, |_, _| {})
}

/// Like [`pcp_decompose`], calling `trace(iteration, relative_residual)`
/// after every iteration.
pub fn pcp_decompose_traced(
    m: &DenseMatrix,
    cfg: &PcpConfig,
    mut trace: impl FnMut(usize, f64),
) -> Result<Decomposition> {
    cfg.validate()?;
    if !m.is_finite() {
        return Err(Error::NonFinite("pcp input"));
    }
    let (rows, cols) = m.shape();
    let norm_m = m.frobenius_norm();
    if norm_m == 0.0 {
        trace(1, 0.0);
        return Ok(Decomposition {
            low_rank: DenseMatrix::zeros(rows, cols),
            sparse: DenseMatrix::zeros(rows, cols),
            iters_used: 1,
            final_residual: 0.0,
            converged: true,
            lambda: 1.0 / (rows.max(cols) as f64).sqrt(),
            mu: f64::INFINITY,
        });
    }
    let (lambda, mu) = cfg.resolve(m);
    let inv_mu = 1.0 / mu;
    let s_tau = lambda * inv_mu;

    let mv = m.as_slice();
    let mut sparse = DenseMatrix::zeros(rows, cols);
    let mut dual = DenseMatrix::zeros(rows, cols);
    let mut work = DenseMatrix::zeros(rows, cols);
    let mut low_rank = DenseMatrix::zeros(rows, cols);
    let mut residual = f64::INFINITY;
    let mut iters = 0;

    for it in 1..=cfg.max_iters {
        iters = it;
        for (((w, &x), &s), &y) in work
            .as_mut_slice()
            .iter_mut()
            .zip(mv)
            .zip(sparse.as_slice())
            .zip(dual.as_slice())
        {
            *w = x - s + y * inv_mu;
        }
        low_rank = svt(&work, inv_mu)?;

        let mut res_sq = 0.0;
        let s = sparse.as_mut_slice();
        let y = dual.as_mut_slice();
        for (idx, &l) in low_rank.as_slice().iter().enumerate() {
            let x = mv[idx];
            let new_s = shrink(x - l + y[idx] * inv_mu, s_tau);
            s[idx] = new_s;
            let r = x - l - new_s;
            y[idx] += mu * r;
            res_sq += r * r;
        }
        residual = res_sq.sqrt() / norm_m;
        trace(it, residual);
        if residual <= cfg.tol {
            break;
        }
    }

    Ok(Decomposition {
        low_rank,
        sparse,
        iters_used: iters,
        final_residual: residual,
        converged: residual <= cfg.tol,
        lambda,
        mu,
    })
}

/// Squared Euclidean norm of each column of `s`.
pub fn column_noise_energy(s: &DenseMatrix) -> Vec<f64> {
    s.column_sq_norms()
}

/// Noise-energy estimate averaged over row blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEstimate {
    /// Per-column estimate, already multiplied by the block count `Q`.
    pub energies: Vec<f64>,
    /// `Q = floor(rows / p_prime)`.
    pub scale: usize,
    pub blocks_used: usize,
    /// True only if every block decomposition converged.
    pub converged: bool,
    pub max_residual: f64,
}

/// Runs PCP on the first `q_blocks` contiguous row blocks of height
/// `p_prime` and averages `Q * column_noise_energy(S_j)` over blocks.
///
/// Rows beyond `Q * p_prime` are never used.
pub fn blockwise_noise_estimate(
    m: &DenseMatrix,
    p_prime: usize,
    q_blocks: usize,
    cfg: &PcpConfig,
) -> Result<BlockEstimate> {
    blockwise_decompose(m, p_prime, q_blocks, cfg).map(|(est, _)| est)
}

/// [`blockwise_noise_estimate`] that also returns each block's
/// decomposition, in block order.
pub fn blockwise_decompose(
    m: &DenseMatrix,
    p_prime: usize,
    q_blocks: usize,
    cfg: &PcpConfig,
) -> Result<(BlockEstimate, Vec<Decomposition>)> {
    let (rows, cols) = m.shape();
    if p_prime == 0 || p_prime > rows {
        return Err(invalid("p_prime", alloc::format!("{p_prime} not in 1..={rows}")));
    }
    if p_prime < cols {
        return Err(invalid(
            "p_prime",
            alloc::format!("{p_prime} is smaller than the column count {cols}"),
        ));
    }
    let scale = rows / p_prime;
    if q_blocks == 0 || q_blocks > scale {
        return Err(invalid(
            "q_blocks",
            alloc::format!("{q_blocks} not in 1..={scale}"),
        ));
    }
    let mut energies = vec![0.0; cols];
    let mut converged = true;
    let mut max_residual: f64 = 0.0;
    let mut blocks = Vec::with_capacity(q_blocks);
    for block in 0..q_blocks {
        let sub = m.row_block(block * p_prime..(block + 1) * p_prime);
        let dec = pcp_decompose(&sub, cfg)?;
        converged &= dec.converged;
        max_residual = max_residual.max(dec.final_residual);
        for (acc, e) in energies.iter_mut().zip(column_noise_energy(&dec.sparse)) {
            *acc += scale as f64 * e;
        }
        blocks.push(dec);
    }
    for e in &mut energies {
        *e /= q_blocks as f64;
    }
    let est = BlockEstimate {
        energies,
        scale,
        blocks_used: q_blocks,
        converged,
        max_residual,
    };
    Ok((est, blocks))
}

#[cfg(test)]
mod tests;
