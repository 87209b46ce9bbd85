use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::DenseMatrix;

/// A differentiable predictor trained with cross-entropy.
pub trait Model: Sync {
    fn num_params(&self) -> usize;

    /// Writes `∇θ ℓ(h(x, θ), y)` into `out`.
    fn sample_gradient(&self, theta: &[f64], x: &[f64], y: usize, out: &mut [f64]);

    fn sample_loss(&self, theta: &[f64], x: &[f64], y: usize) -> f64;

    fn predict(&self, theta: &[f64], x: &[f64]) -> usize;
}

/// The two desk-scale architectures: multinomial logistic regression and a
/// one-hidden-layer tanh network.
///
/// Parameter layout, row-major blocks in order:
/// linear `[W (C×d), b (C)]`; mlp `[W1 (h×d), b1 (h), W2 (C×h), b2 (C)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LinearSoftmax { inputs: usize, classes: usize },
    Mlp { inputs: usize, hidden: usize, classes: usize },
}

impl ModelSpec {
    pub fn inputs(&self) -> usize {
        match *self {
            ModelSpec::LinearSoftmax { inputs, .. } | ModelSpec::Mlp { inputs, .. } => inputs,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelSpec::LinearSoftmax { classes, .. } | ModelSpec::Mlp { classes, .. } => classes,
        }
    }

    /// Initial parameters: zeros for the linear model, scaled Gaussian
    /// weights and zero biases for the MLP.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = vec![0.0; self.num_params()];
        if let ModelSpec::Mlp {
            inputs,
            hidden,
            classes,
        } = *self
        {
            let s1 = 1.0 / (inputs as f64).sqrt();
            for v in &mut theta[..hidden * inputs] {
                *v = s1 * rng.sample::<f64, _>(StandardNormal);
            }
            let w2 = hidden * inputs + hidden;
            let s2 = 1.0 / (hidden as f64).sqrt();
            for v in &mut theta[w2..w2 + classes * hidden] {
                *v = s2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        theta
    }
}

fn logits_linear(theta: &[f64], x: &[f64], classes: usize, out: &mut [f64]) {
    let d = x.len();
    let bias = &theta[classes * d..];
    for (k, o) in out.iter_mut().enumerate().take(classes) {
        let w = &theta[k * d..(k + 1) * d];
        *o = bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Overwrites `logits` with softmax probabilities and returns
/// `-log p_y`.
fn softmax_in_place(logits: &mut [f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let loss = total.ln() - logits[y].ln();
    for v in logits.iter_mut() {
        *v /= total;
    }
    loss
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct MlpForward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn mlp_forward(theta: &[f64], x: &[f64], hidden: usize, classes: usize) -> MlpForward {
    let d = x.len();
    let (w1, rest) = theta.split_at(hidden * d);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(classes * hidden);
    let h: Vec<f64> = (0..hidden)
        .map(|j| {
            let row = &w1[j * d..(j + 1) * d];
            (b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh()
        })
        .collect();
    let logits = (0..classes)
        .map(|k| {
            let row = &w2[k * hidden..(k + 1) * hidden];
            b2[k] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    MlpForward { hidden: h, logits }
}

impl Model for ModelSpec {
    fn num_params(&self) -> usize {
        match *self {
            ModelSpec::LinearSoftmax { inputs, classes } => classes * (inputs + 1),
            ModelSpec::Mlp {
                inputs,
                hidden,
                classes,
            } => hidden * (inputs + 1) + classes * (hidden + 1),
        }
    }

    fn sample_gradient(&self, theta: &[f64], x: &[f64], y: usize, out: &mut [f64]) {
        match *self {
            ModelSpec::LinearSoftmax { inputs, classes } => {
                let mut probs = vec![0.0; classes];
                logits_linear(theta, x, classes, &mut probs);
                softmax_in_place(&mut probs, y);
                probs[y] -= 1.0;
                for k in 0..classes {
                    let g = probs[k];
                    for (o, xi) in out[k * inputs..(k + 1) * inputs].iter_mut().zip(x) {
                        *o = g * xi;
                    }
                    out[classes * inputs + k] = g;
                }
            }
            ModelSpec::Mlp {
                inputs,
                hidden,
                classes,
            } => {
                let MlpForward { hidden: h, mut logits } = mlp_forward(theta, x, hidden, classes);
                softmax_in_place(&mut logits, y);
                logits[y] -= 1.0;
                let dlogits = logits;
                let w2_off = hidden * inputs + hidden;
                let b2_off = w2_off + classes * hidden;
                let w2 = &theta[w2_off..b2_off];
                let mut dpre = vec![0.0; hidden];
                for k in 0..classes {
                    let g = dlogits[k];
                    for j in 0..hidden {
                        out[w2_off + k * hidden + j] = g * h[j];
                        dpre[j] += g * w2[k * hidden + j];
                    }
                    out[b2_off + k] = g;
                }
                for j in 0..hidden {
                    let g = dpre[j] * (1.0 - h[j] * h[j]);
                    for (o, xi) in out[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                        *o = g * xi;
                    }
                    out[hidden * inputs + j] = g;
                }
            }
        }
    }

    fn sample_loss(&self, theta: &[f64], x: &[f64], y: usize) -> f64 {
        match *self {
            ModelSpec::LinearSoftmax { classes, .. } => {
                let mut logits = vec![0.0; classes];
                logits_linear(theta, x, classes, &mut logits);
                softmax_in_place(&mut logits, y)
            }
            ModelSpec::Mlp {
                hidden, classes, ..
            } => softmax_in_place(&mut mlp_forward(theta, x, hidden, classes).logits, y),
        }
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        match *self {
            ModelSpec::LinearSoftmax { classes, .. } => {
                let mut logits = vec![0.0; classes];
                logits_linear(theta, x, classes, &mut logits);
                argmax(&logits)
            }
            ModelSpec::Mlp {
                hidden, classes, ..
            } => argmax(&mlp_forward(theta, x, hidden, classes).logits),
        }
    }
}

/// Row `j` is the gradient of the loss on sample `indices[j]`.
pub fn per_sample_gradients<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    indices: &[usize],
) -> DenseMatrix {
    let p = model.num_params();
    let mut out = DenseMatrix::zeros(indices.len(), p);
    for (row, &i) in indices.iter().enumerate() {
        model.sample_gradient(theta, data.features(i), data.label(i), out.row_mut(row));
    }
    out
}

/// Mean loss and accuracy of `theta` on `data`.
pub fn evaluate<M: Model + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let x = data.features(i);
        let y = data.label(i);
        loss += model.sample_loss(theta, x, y);
        if model.predict(theta, x) == y {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    (loss / n, correct as f64 / n)
}
