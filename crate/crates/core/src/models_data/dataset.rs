use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::{Error, Result};

/// Labelled samples with row-major features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                found: features.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid("labels", format!("label {bad} >= class count {classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn raw_features(&self) -> &[f64] {
        &self.features
    }

    /// New dataset holding the given samples, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.dim, self.classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Gaussian class clusters with unit covariance.
///
/// For `classes <= dim` class `k` is centred at `(sep / √2) e_k`, so every
/// pair of means is exactly `sep` apart. Otherwise the centres are random
/// directions of the same norm. Labels are balanced and shuffled.
pub fn generate_synthetic<R: Rng + ?Sized>(
    n_samples: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n_samples == 0 || dim == 0 {
        return Err(invalid("n_samples", "sample count and dimension must be positive"));
    }
    if classes < 2 {
        return Err(invalid("classes", "need at least two classes"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(invalid("class_separation", "must be finite and nonnegative"));
    }
    let radius = separation / 2f64.sqrt();
    let mut means = alloc::vec![0.0; classes * dim];
    for k in 0..classes {
        let mean = &mut means[k * dim..(k + 1) * dim];
        if classes <= dim {
            mean[k] = radius;
        } else {
            for v in mean.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for v in mean.iter_mut() {
                *v *= radius / norm;
            }
        }
    }
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % classes).collect();
    labels.shuffle(rng);
    let mut features = Vec::with_capacity(n_samples * dim);
    for &y in &labels {
        for j in 0..dim {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(means[y * dim + j] + noise);
        }
    }
    Dataset::new(features, labels, dim, classes)
}
