//! Client-side DPSGD and the analytic variance of its updates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::models_data::{Dataset, Model};
use crate::{DenseMatrix, Error, Result};

pub type ParamVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub clip: f64,
    pub noise_scale: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub step_size: f64,
    /// Gradient accumulation: micro-batches of `batch_size` are summed until
    /// this many samples have been seen, then noised once.
    #[serde(default)]
    pub logical_batch: Option<usize>,
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(invalid("clip", "must be positive"));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(invalid("noise_scale", "must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", "must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(invalid("step_size", "must be positive"));
        }
        if let Some(l) = self.logical_batch {
            if l == 0 || l % self.batch_size != 0 {
                return Err(invalid(
                    "logical_batch",
                    format!("{l} is not a positive multiple of batch size {}", self.batch_size),
                ));
            }
        }
        Ok(())
    }

    /// Samples per noisy step: the logical batch when accumulating.
    pub fn effective_batch(&self) -> usize {
        self.logical_batch.unwrap_or(self.batch_size)
    }

    /// `K · ⌈N / B⌉`.
    pub fn steps_per_round(&self, n: usize) -> u64 {
        (self.local_epochs * n.div_ceil(self.effective_batch())) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClippingRegime {
    /// Every per-sample gradient is at least `c` in norm.
    Effective,
    /// No per-sample gradient reaches `c`.
    Ineffective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub grad_variance: f64,
    pub update_variance: f64,
    pub regime: ClippingRegime,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn clip_in_place(g: &mut [f64], c: f64) {
    let n = norm(g);
    if n > c {
        let s = c / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// `min(‖g‖, c) · g/‖g‖`; the zero vector maps to itself.
pub fn clip(g: &[f64], c: f64) -> ParamVector {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    out
}

fn noise_and_scale<R: Rng + ?Sized>(sum: &mut [f64], cfg: &DpSgdConfig, b: usize, rng: &mut R) {
    let sd = cfg.clip * cfg.noise_scale;
    let inv_b = 1.0 / b as f64;
    for v in sum.iter_mut() {
        if sd > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            *v += sd * z;
        }
        *v *= inv_b;
    }
}

/// `(1/b)(Σ_j clip(g_j, c) + N(0, (cz)² I))` for the rows `g_j`.
pub fn noisy_batch_gradient<R: Rng + ?Sized>(
    per_sample: &DenseMatrix,
    cfg: &DpSgdConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    noisy_batch_gradient_observed(per_sample, cfg, rng, &mut |_| {})
}

/// As [`noisy_batch_gradient`], passing every clipped contribution to
/// `observer` before it is summed.
pub fn noisy_batch_gradient_observed<R: Rng + ?Sized>(
    per_sample: &DenseMatrix,
    cfg: &DpSgdConfig,
    rng: &mut R,
    observer: &mut dyn FnMut(&[f64]),
) -> Result<ParamVector> {
    cfg.validate()?;
    let b = cfg.effective_batch();
    if per_sample.rows() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            found: per_sample.rows(),
        });
    }
    let mut sum = vec![0.0; per_sample.cols()];
    let mut row = vec![0.0; per_sample.cols()];
    for r in 0..b {
        row.copy_from_slice(per_sample.row(r));
        clip_in_place(&mut row, cfg.clip);
        observer(&row);
        sum.iter_mut().zip(&row).for_each(|(s, v)| *s += v);
    }
    noise_and_scale(&mut sum, cfg, b, rng);
    Ok(sum)
}

/// One round of local DPSGD; returns `θ_end − θ_start`.
///
/// Each epoch shuffles the data and takes `⌈N/B⌉` steps over consecutive
/// batches of exactly `B` samples, wrapping around to fill the last one.
pub fn local_round<M: Model + ?Sized, R: Rng + ?Sized>(
    theta_start: &[f64],
    data: &Dataset,
    model: &M,
    cfg: &DpSgdConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    local_round_observed(theta_start, data, model, cfg, rng, &mut |_| {})
}

pub fn local_round_observed<M: Model + ?Sized, R: Rng + ?Sized>(
    theta_start: &[f64],
    data: &Dataset,
    model: &M,
    cfg: &DpSgdConfig,
    rng: &mut R,
    observer: &mut dyn FnMut(&[f64]),
) -> Result<ParamVector> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("client dataset"));
    }
    let p = model.num_params();
    if theta_start.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: theta_start.len(),
        });
    }
    let n = data.len();
    let big_b = cfg.effective_batch();
    let steps = n.div_ceil(big_b);
    let mut theta = theta_start.to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    let mut sum = vec![0.0; p];
    let mut g = vec![0.0; p];
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for s in 0..steps {
            sum.iter_mut().for_each(|v| *v = 0.0);
            // Micro-batches share θ and are summed in sample order, so
            // accumulation reproduces the direct batch exactly.
            for j in 0..big_b {
                let i = order[(s * big_b + j) % n];
                model.sample_gradient(&theta, data.features(i), data.label(i), &mut g);
                clip_in_place(&mut g, cfg.clip);
                observer(&g);
                sum.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
            }
            noise_and_scale(&mut sum, cfg, big_b, rng);
            theta
                .iter_mut()
                .zip(&sum)
                .for_each(|(t, v)| *t -= cfg.step_size * v);
        }
    }
    Ok(theta.iter().zip(theta_start).map(|(a, b)| a - b).collect())
}

/// Total variance `E‖g̃ − E g̃‖²` of one noisy batch gradient.
///
/// Effective clipping: `(c² − ‖G‖²)/b + p c² z²/b²` with `g_norm = ‖G‖`.
/// Ineffective clipping: the bound `σ_g² + p c² z²/b²`.
pub fn predicted_grad_variance(
    cfg: &DpSgdConfig,
    p: usize,
    regime: ClippingRegime,
    g_norm: f64,
    sigma_g2: f64,
) -> Result<f64> {
    cfg.validate()?;
    let b = cfg.effective_batch() as f64;
    let c = cfg.clip;
    let z = cfg.noise_scale;
    let dp = p as f64 * c * c * z * z / (b * b);
    match regime {
        ClippingRegime::Effective => {
            if !(g_norm >= 0.0) || g_norm > c {
                return Err(invalid(
                    "g_norm",
                    format!("mean clipped gradient norm {g_norm} outside [0, c = {c}]"),
                ));
            }
            Ok((c * c - g_norm * g_norm) / b + dp)
        }
        ClippingRegime::Ineffective => {
            if !(sigma_g2 >= 0.0) {
                return Err(invalid("sigma_g2", "must be nonnegative"));
            }
            Ok(sigma_g2 + dp)
        }
    }
}

/// `K · ⌈N/B⌉ · η² · grad_variance`.
pub fn predicted_update_variance(cfg: &DpSgdConfig, n: usize, grad_variance: f64) -> f64 {
    cfg.steps_per_round(n) as f64 * cfg.step_size * cfg.step_size * grad_variance
}

pub fn noise_profile(
    cfg: &DpSgdConfig,
    n: usize,
    p: usize,
    regime: ClippingRegime,
    g_norm: f64,
    sigma_g2: f64,
) -> Result<NoiseProfile> {
    let grad_variance = predicted_grad_variance(cfg, p, regime, g_norm, sigma_g2)?;
    Ok(NoiseProfile {
        grad_variance,
        update_variance: predicted_update_variance(cfg, n, grad_variance),
        regime,
    })
}
