use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp_local::ParamVector;
use crate::error::invalid;
use crate::rpca::{blockwise_noise_estimate, PcpConfig};
use crate::{DenseMatrix, Error, Result};

/// Nonnegative aggregation weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalizes nonnegative scores; fails if they do not have a positive
    /// finite sum.
    pub fn normalize(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("weights"));
        }
        if scores.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(invalid("weights", "scores must be finite and nonnegative"));
        }
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("weights", "scores must have a positive finite sum"));
        }
        Ok(WeightVector(scores.into_iter().map(|s| s / total).collect()))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::normalize(vec![1.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn linf_distance(&self, other: &WeightVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn reciprocal(values: &[f64], what: &'static str) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|v| {
            if *v > 0.0 && v.is_finite() {
                Ok(1.0 / v)
            } else {
                Err(invalid(what, format!("{v} is not positive")))
            }
        })
        .collect()
}

/// `w_i ∝ 1/σ_i²`, the minimizer of `Σ w_i² σ_i²` on the simplex.
pub fn oracle_weights(sigma2: &[f64]) -> Result<WeightVector> {
    WeightVector::normalize(reciprocal(sigma2, "sigma2")?)
}

/// `w_i ∝ ε_i` over the *reported* privacy parameters.
pub fn weiavg_weights(reported_eps: &[f64]) -> Result<WeightVector> {
    if let Some(bad) = reported_eps.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(invalid("reported_epsilon", format!("{bad} is not positive")));
    }
    WeightVector::normalize(reported_eps.to_vec())
}

/// `w_i ∝ N_i`.
pub fn dpfedavg_weights(sizes: &[usize]) -> Result<WeightVector> {
    if sizes.contains(&0) {
        return Err(invalid("dataset_size", "must be at least 1"));
    }
    WeightVector::normalize(sizes.iter().map(|&n| n as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustHdpConfig {
    #[serde(default)]
    pub pcp: PcpConfig,
    /// Block height; `None` or anything ≥ p decomposes the whole matrix.
    #[serde(default)]
    pub p_prime: Option<usize>,
    #[serde(default = "one")]
    pub q_blocks: usize,
}

fn one() -> usize {
    1
}

impl Default for RobustHdpConfig {
    fn default() -> Self {
        RobustHdpConfig {
            pcp: PcpConfig::default(),
            p_prime: None,
            q_blocks: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustHdpDiagnostics {
    pub sigma2_hat: Vec<f64>,
    pub converged: bool,
    pub max_residual: f64,
    /// Every estimate was zero; uniform weights were returned.
    pub degenerate: bool,
}

/// Relative floor applied to the estimated noise energies.
pub const ENERGY_FLOOR: f64 = 1e-12;

/// Weights from the update matrix alone (`p × m`, one column per
/// participant): PCP noise energies `σ̂_i²`, floored at `1e-12·max`,
/// inverted and normalized.
pub fn robust_hdp_weights(
    updates: &DenseMatrix,
    cfg: &RobustHdpConfig,
) -> Result<(WeightVector, RobustHdpDiagnostics)> {
    let (p, m) = updates.shape();
    if m == 1 {
        // Nothing to separate: the single column is all the estimate there is.
        let diag = RobustHdpDiagnostics {
            sigma2_hat: updates.column_sq_norms(),
            converged: true,
            max_residual: 0.0,
            degenerate: false,
        };
        return Ok((WeightVector::uniform(1)?, diag));
    }
    let p_prime = cfg.p_prime.map_or(p, |pp| pp.min(p));
    let est = blockwise_noise_estimate(updates, p_prime, cfg.q_blocks, &cfg.pcp)?;
    let max = est.energies.iter().copied().fold(0.0, f64::max);
    let mut diag = RobustHdpDiagnostics {
        sigma2_hat: est.energies,
        converged: est.converged,
        max_residual: est.max_residual,
        degenerate: false,
    };
    if !(max > 0.0) {
        diag.degenerate = true;
        return Ok((WeightVector::uniform(m)?, diag));
    }
    let floor = ENERGY_FLOOR * max;
    let scores = diag.sigma2_hat.iter().map(|e| 1.0 / e.max(floor)).collect();
    Ok((WeightVector::normalize(scores)?, diag))
}

/// `θ + Σ_i w_i Δθ̃_i` with updates as the columns of a `p × m` matrix.
pub fn aggregate(theta: &[f64], updates: &DenseMatrix, w: &WeightVector) -> Result<ParamVector> {
    let (p, m) = updates.shape();
    if theta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: theta.len(),
        });
    }
    if w.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: w.len(),
        });
    }
    let mut out = theta.to_vec();
    for (r, o) in out.iter_mut().enumerate() {
        *o += updates
            .row(r)
            .iter()
            .zip(w.as_slice())
            .map(|(u, wi)| wi * u)
            .sum::<f64>();
    }
    Ok(out)
}

/// Average per-parameter noise variance of the aggregate, normalized by the
/// step size: `Σ w_i² σ_i² / (p η²)`.
pub fn aggregated_noise_metric(w: &[f64], sigma2: &[f64], p: usize, eta: f64) -> Result<f64> {
    if w.len() != sigma2.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            found: sigma2.len(),
        });
    }
    if p == 0 || !(eta > 0.0) {
        return Err(invalid("eta", "p and eta must be positive"));
    }
    let total: f64 = w.iter().zip(sigma2).map(|(a, s)| a * a * s).sum();
    Ok(total / (p as f64 * eta * eta))
}

/// Uniform subset of `⌈fraction · n⌉` client ids, in ascending order.
pub fn sample_participants<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid("fraction", format!("{fraction} not in (0, 1]")));
    }
    let k = (fraction * n as f64).ceil() as usize;
    if k == 0 {
        return Err(Error::Empty("participants"));
    }
    let mut ids = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Step-size preconditions of the convergence analysis for a
/// `β`-smooth loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeCheck {
    /// `min_i 1/(6 β E_i)`.
    pub local_limit: f64,
    /// `1/(12 β √((1 + Σ E_i) Σ E_i⁴))`.
    pub global_limit: f64,
    pub local_ok: bool,
    pub global_ok: bool,
}

pub fn step_size_check(eta: f64, beta: f64, steps_per_round: &[u64]) -> Result<StepSizeCheck> {
    if !(beta > 0.0) || steps_per_round.is_empty() || steps_per_round.contains(&0) {
        return Err(invalid("beta", "need beta > 0 and positive local step counts"));
    }
    let max_e = *steps_per_round.iter().max().unwrap_or(&1) as f64;
    let sum: f64 = steps_per_round.iter().map(|&e| e as f64).sum();
    let sum4: f64 = steps_per_round.iter().map(|&e| (e as f64).powi(4)).sum();
    let local_limit = 1.0 / (6.0 * beta * max_e);
    let global_limit = 1.0 / (12.0 * beta * ((1.0 + sum) * sum4).sqrt());
    Ok(StepSizeCheck {
        local_limit,
        global_limit,
        local_ok: eta <= local_limit,
        global_ok: eta <= global_limit,
    })
}
