use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_noise_scale, AccountingInputs, PrivacyTarget};
use crate::dp_local::{predicted_grad_variance, predicted_update_variance, ClippingRegime, DpSgdConfig};
use crate::error::invalid;
use crate::models_data::{split_indices, Dataset, SplitSpec};
use crate::{Error, Result};

/// Static configuration of one client.
///
/// `noise_scale` is always calibrated from the true `epsilon`; the server
/// only ever sees `reported_epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: usize,
    pub dataset_size: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub logical_batch: Option<usize>,
    pub epsilon: f64,
    pub delta: f64,
    pub reported_epsilon: f64,
    pub local_epochs: usize,
    pub noise_scale: f64,
    #[serde(default)]
    pub floor_clamped: bool,
}

impl ClientSpec {
    /// A client whose noise scale is calibrated for `total_rounds` rounds.
    pub fn calibrated(
        id: usize,
        dataset_size: usize,
        batch_size: usize,
        epsilon: f64,
        delta: f64,
        local_epochs: usize,
        total_rounds: usize,
    ) -> Result<Self> {
        let mut c = ClientSpec {
            id,
            dataset_size,
            batch_size,
            logical_batch: None,
            epsilon,
            delta,
            reported_epsilon: epsilon,
            local_epochs,
            noise_scale: 0.0,
            floor_clamped: false,
        };
        c.calibrate(total_rounds)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.dataset_size < self.batch_size {
            return Err(invalid(
                "batch_size",
                format!(
                    "client {}: need 1 <= b ({}) <= N ({})",
                    self.id, self.batch_size, self.dataset_size
                ),
            ));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", "must be at least 1"));
        }
        if !(self.reported_epsilon > 0.0) || !self.reported_epsilon.is_finite() {
            return Err(invalid("reported_epsilon", "must be positive"));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(invalid("noise_scale", "must be finite and nonnegative"));
        }
        PrivacyTarget::new(self.epsilon, self.delta).map(|_| ())
    }

    /// Samples per noisy step.
    pub fn effective_batch(&self) -> usize {
        self.logical_batch.unwrap_or(self.batch_size)
    }

    /// `q = B / N`.
    pub fn sampling_ratio(&self) -> f64 {
        self.effective_batch() as f64 / self.dataset_size as f64
    }

    /// `E_i = K · ⌈N / B⌉`.
    pub fn steps_per_round(&self) -> u64 {
        (self.local_epochs * self.dataset_size.div_ceil(self.effective_batch())) as u64
    }

    pub fn accounting_inputs(&self, total_rounds: usize) -> AccountingInputs {
        AccountingInputs {
            q: self.sampling_ratio(),
            steps_per_round: self.steps_per_round(),
            total_rounds: total_rounds.max(1) as u64,
        }
    }

    /// Sets `noise_scale` from the true ε.
    pub fn calibrate(&mut self, total_rounds: usize) -> Result<()> {
        self.validate()?;
        let cal = calibrate_noise_scale(
            PrivacyTarget::new(self.epsilon, self.delta)?,
            self.accounting_inputs(total_rounds),
        )?;
        self.noise_scale = cal.z;
        self.floor_clamped = cal.floor_clamped;
        Ok(())
    }

    pub fn dpsgd(&self, clip: f64, step_size: f64) -> DpSgdConfig {
        DpSgdConfig {
            clip,
            noise_scale: self.noise_scale,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            step_size,
            logical_batch: self.logical_batch,
        }
    }

    /// True per-round update variance, from the effective-clipping formula
    /// with a zero mean clipped gradient.
    pub fn update_variance(&self, clip: f64, step_size: f64, p: usize) -> Result<f64> {
        let cfg = self.dpsgd(clip, step_size);
        let gv = predicted_grad_variance(&cfg, p, ClippingRegime::Effective, 0.0, 0.0)?;
        Ok(predicted_update_variance(&cfg, self.dataset_size, gv))
    }
}

/// Every client adopts the smallest ε in the population (noise scales
/// recalibrated accordingly). Reported ε values are left untouched.
pub fn minimum_epsilon_transform(clients: &[ClientSpec], total_rounds: usize) -> Result<Vec<ClientSpec>> {
    let min = clients
        .iter()
        .map(|c| c.epsilon)
        .fold(f64::INFINITY, f64::min);
    if clients.is_empty() {
        return Err(Error::Empty("clients"));
    }
    clients
        .iter()
        .map(|c| {
            let mut out = c.clone();
            if out.epsilon != min {
                out.epsilon = min;
                out.calibrate(total_rounds)?;
            }
            Ok(out)
        })
        .collect()
}

/// Per-client heterogeneity of a population: one entry per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub epsilons: Vec<f64>,
    /// Defaults to `epsilons` when empty.
    #[serde(default)]
    pub reported_epsilons: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub local_epochs: Vec<usize>,
    pub delta: f64,
    pub rounds: usize,
    /// Share of each client's samples held out for evaluation.
    pub test_fraction: f64,
    /// Skip calibration and train without noise (`z = 0`).
    #[serde(default)]
    pub non_private: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub clients: Vec<ClientSpec>,
    pub train: Vec<Dataset>,
    pub test: Vec<Option<Dataset>>,
    /// Sample indices of each client into the source dataset.
    pub assignment: Vec<Vec<usize>>,
    /// Clients whose batch size was reduced to fit their training set.
    pub batch_clamped: Vec<usize>,
}

/// Splits `data` across clients, holds out a test share of each client's
/// samples and calibrates every client's noise scale.
///
/// Clients whose calibration fails are collected into a single
/// [`Error::ClientsInfeasible`].
pub fn build_population<R: Rng + ?Sized>(
    data: &Dataset,
    split: &SplitSpec,
    spec: &PopulationSpec,
    rng: &mut R,
) -> Result<Population> {
    let n = split.n_clients;
    for (name, len) in [
        ("epsilons", spec.epsilons.len()),
        ("batch_sizes", spec.batch_sizes.len()),
        ("local_epochs", spec.local_epochs.len()),
    ] {
        if len != n {
            return Err(invalid(name, format!("has {len} entries for {n} clients")));
        }
    }
    if !spec.reported_epsilons.is_empty() && spec.reported_epsilons.len() != n {
        return Err(invalid("reported_epsilons", "length differs from the client count"));
    }
    if !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(invalid("test_fraction", "must be in [0, 1)"));
    }
    let mut assignment = split_indices(data.labels(), data.classes(), split, rng)?;
    let mut clients = Vec::with_capacity(n);
    let mut train = Vec::with_capacity(n);
    let mut test = Vec::with_capacity(n);
    let mut batch_clamped = Vec::new();
    let mut infeasible = Vec::new();
    for (id, idx) in assignment.iter_mut().enumerate() {
        idx.shuffle(rng);
        let n_train = (libm::round((1.0 - spec.test_fraction) * idx.len() as f64) as usize).clamp(1, idx.len());
        train.push(data.subset(&idx[..n_train])?);
        test.push(if n_train < idx.len() {
            Some(data.subset(&idx[n_train..])?)
        } else {
            None
        });
        let mut b = spec.batch_sizes[id];
        if b > n_train {
            b = n_train;
            batch_clamped.push(id);
        }
        let mut c = ClientSpec {
            id,
            dataset_size: n_train,
            batch_size: b,
            logical_batch: None,
            epsilon: spec.epsilons[id],
            delta: spec.delta,
            reported_epsilon: spec
                .reported_epsilons
                .get(id)
                .copied()
                .unwrap_or(spec.epsilons[id]),
            local_epochs: spec.local_epochs[id],
            noise_scale: 0.0,
            floor_clamped: false,
        };
        c.validate()?;
        if !spec.non_private {
            match c.calibrate(spec.rounds) {
                Ok(()) => {}
                Err(Error::CalibrationInfeasible { .. }) => infeasible.push(id),
                Err(e) => return Err(e),
            }
        }
        clients.push(c);
    }
    if !infeasible.is_empty() {
        return Err(Error::ClientsInfeasible(infeasible));
    }
    Ok(Population {
        clients,
        train,
        test,
        assignment,
        batch_clamped,
    })
}
