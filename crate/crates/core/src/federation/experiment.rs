use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::client::{minimum_epsilon_transform, ClientSpec};
use super::weights::{
    aggregate, aggregated_noise_metric, dpfedavg_weights, oracle_weights, robust_hdp_weights,
    sample_participants, weiavg_weights, RobustHdpConfig,
};
use crate::accountant::{epsilon_spent, AccountantLedger};
use crate::dp_local::{local_round, ParamVector};
use crate::error::invalid;
use crate::models_data::{evaluate, Dataset, Model, ModelSpec};
use crate::rng::{self, CLIENT, SERVER, SETUP};
use crate::{DenseMatrix, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    RobustHdp,
    #[serde(alias = "weiavg")]
    WeiAvg,
    #[serde(alias = "dpfedavg")]
    DpFedAvg,
    MinimumEpsilon,
    Oracle,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::RobustHdp,
        StrategyKind::WeiAvg,
        StrategyKind::DpFedAvg,
        StrategyKind::MinimumEpsilon,
        StrategyKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::RobustHdp => "robust_hdp",
            StrategyKind::WeiAvg => "wei_avg",
            StrategyKind::DpFedAvg => "dp_fed_avg",
            StrategyKind::MinimumEpsilon => "minimum_epsilon",
            StrategyKind::Oracle => "oracle",
        }
    }
}

/// Runs the local rounds of one global round.
///
/// Implementations may execute jobs in any order or concurrently, but must
/// return results in job order.
pub trait ClientExecutor {
    fn execute(
        &self,
        jobs: usize,
        job: &(dyn Fn(usize) -> Result<ParamVector> + Sync),
    ) -> Vec<Result<ParamVector>>;
}

pub struct Sequential;

impl ClientExecutor for Sequential {
    fn execute(
        &self,
        jobs: usize,
        job: &(dyn Fn(usize) -> Result<ParamVector> + Sync),
    ) -> Vec<Result<ParamVector>> {
        (0..jobs).map(job).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub model: ModelSpec,
    pub clients: Vec<ClientSpec>,
    pub train: Vec<Dataset>,
    pub test: Vec<Option<Dataset>>,
    pub rounds: usize,
    pub fraction: f64,
    pub strategy: StrategyKind,
    pub clip: f64,
    pub step_size: f64,
    pub robust: RobustHdpConfig,
    pub seed: u64,
}

/// Everything observed in one global round. Per-participant vectors are in
/// the order of `participants`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub participants: Vec<usize>,
    /// Weights used by the running strategy.
    pub weights: Vec<f64>,
    pub oracle_weights: Vec<f64>,
    pub weiavg_weights: Vec<f64>,
    pub dpfedavg_weights: Vec<f64>,
    /// Only present when the running strategy is Robust-HDP.
    pub sigma2_hat: Option<Vec<f64>>,
    pub sigma2_true: Vec<f64>,
    pub eps_spent: Vec<f64>,
    /// `Σ w_i² σ_i² / (p η²)` for the weights used.
    pub noise_metric: f64,
    pub oracle_noise_metric: f64,
    pub rpca_converged: Option<bool>,
    pub rpca_degenerate: Option<bool>,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub theta: ParamVector,
    pub ledger: AccountantLedger,
    /// Clients as actually trained (after the minimum-ε transform, if any).
    pub clients: Vec<ClientSpec>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.clients.len();
        if n == 0 {
            return Err(Error::Empty("clients"));
        }
        if self.train.len() != n || self.test.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.train.len().min(self.test.len()),
            });
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(invalid("fraction", "must be in (0, 1]"));
        }
        if !(self.clip > 0.0) || !(self.step_size > 0.0) {
            return Err(invalid("clip", "clip and step size must be positive"));
        }
        for (c, d) in self.clients.iter().zip(&self.train) {
            c.validate()?;
            if c.dataset_size != d.len() {
                return Err(invalid("dataset_size", "client spec disagrees with its data"));
            }
            if d.dim() != self.model.inputs() || d.classes() > self.model.classes() {
                return Err(invalid("model", "input dimension or classes disagree with the data"));
            }
        }
        self.robust.pcp.validate()
    }

    pub fn initial_params(&self) -> ParamVector {
        self.model.init_params(&mut rng::stream(self.seed, SETUP, 1, 0))
    }
}

/// Sample-weighted mean loss and accuracy over several datasets.
pub fn evaluate_pooled<'a, M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sets: impl IntoIterator<Item = &'a Dataset>,
) -> (f64, f64) {
    let (mut loss, mut acc, mut n) = (0.0, 0.0, 0usize);
    for d in sets {
        let (l, a) = evaluate(model, theta, d);
        loss += l * d.len() as f64;
        acc += a * d.len() as f64;
        n += d.len();
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    (loss / n as f64, acc / n as f64)
}

/// The round loop: sample participants, train locally, weight, aggregate,
/// account and evaluate.
///
/// Client `i` in round `e` draws from the stream `(seed, client, i, e)` and
/// participant sampling from `(seed, server, e)`, so neither depends on
/// the strategy.
pub fn run_experiment<E: ClientExecutor + ?Sized>(spec: &ExperimentSpec, exec: &E) -> Result<ExperimentResult> {
    spec.validate()?;
    let clients = if spec.strategy == StrategyKind::MinimumEpsilon {
        let private = spec.clients.iter().all(|c| c.noise_scale > 0.0);
        if private {
            minimum_epsilon_transform(&spec.clients, spec.rounds)?
        } else {
            spec.clients.clone()
        }
    } else {
        spec.clients.clone()
    };
    let p = spec.model.num_params();
    let mut theta = spec.initial_params();
    let mut ledger = AccountantLedger::new();
    for c in &clients {
        ledger.register(c.id, c.delta)?;
    }
    let sigma2: Vec<f64> = clients
        .iter()
        .map(|c| c.update_variance(spec.clip, spec.step_size, p))
        .collect::<Result<_>>()?;
    let mut participations = alloc::vec![0u64; clients.len()];
    let mut records = Vec::with_capacity(spec.rounds);

    for round in 1..=spec.rounds {
        let mut server = rng::stream(spec.seed, SERVER, round as u64, 0);
        let participants = sample_participants(clients.len(), spec.fraction, &mut server)?;
        let theta_ref = &theta;
        let job = |j: usize| -> Result<ParamVector> {
            let c = &clients[participants[j]];
            let mut r = rng::stream(spec.seed, CLIENT, c.id as u64, round as u64);
            local_round(
                theta_ref,
                &spec.train[participants[j]],
                &spec.model,
                &c.dpsgd(spec.clip, spec.step_size),
                &mut r,
            )
        };
        let updates: Vec<ParamVector> = exec
            .execute(participants.len(), &job)
            .into_iter()
            .collect::<Result<_>>()?;
        let m = participants.len();
        let mut matrix = DenseMatrix::zeros(p, m);
        for (j, u) in updates.iter().enumerate() {
            for (r, v) in u.iter().enumerate() {
                matrix.set(r, j, *v);
            }
        }

        let part = |f: &dyn Fn(&ClientSpec) -> f64| -> Vec<f64> {
            participants.iter().map(|&i| f(&clients[i])).collect()
        };
        let sig: Vec<f64> = participants.iter().map(|&i| sigma2[i]).collect();
        let oracle = oracle_weights(&sig)?;
        let weiavg = weiavg_weights(&part(&|c| c.reported_epsilon))?;
        let sizes: Vec<usize> = participants.iter().map(|&i| clients[i].dataset_size).collect();
        let dpfedavg = dpfedavg_weights(&sizes)?;

        let (weights, sigma2_hat, converged, degenerate) = match spec.strategy {
            StrategyKind::RobustHdp => {
                let (w, diag) = robust_hdp_weights(&matrix, &spec.robust)?;
                (w, Some(diag.sigma2_hat), Some(diag.converged), Some(diag.degenerate))
            }
            StrategyKind::WeiAvg => (weiavg.clone(), None, None, None),
            StrategyKind::DpFedAvg | StrategyKind::MinimumEpsilon => (dpfedavg.clone(), None, None, None),
            StrategyKind::Oracle => (oracle.clone(), None, None, None),
        };
        theta = aggregate(&theta, &matrix, &weights)?;

        let mut eps_spent = Vec::with_capacity(m);
        for &i in &participants {
            participations[i] += 1;
            let c = &clients[i];
            let eps = if c.noise_scale > 0.0 {
                epsilon_spent(
                    c.sampling_ratio(),
                    c.noise_scale,
                    participations[i] * c.steps_per_round(),
                    c.delta,
                )?
            } else {
                f64::INFINITY
            };
            ledger.record(c.id, round as u64, eps)?;
            eps_spent.push(eps);
        }

        let (train_loss, _) = evaluate_pooled(&spec.model, &theta, &spec.train);
        let (test_loss, test_accuracy) =
            evaluate_pooled(&spec.model, &theta, spec.test.iter().flatten());
        records.push(RoundRecord {
            round,
            participants: participants.clone(),
            noise_metric: aggregated_noise_metric(weights.as_slice(), &sig, p, spec.step_size)?,
            oracle_noise_metric: aggregated_noise_metric(oracle.as_slice(), &sig, p, spec.step_size)?,
            weights: weights.into_vec(),
            oracle_weights: oracle.into_vec(),
            weiavg_weights: weiavg.into_vec(),
            dpfedavg_weights: dpfedavg.into_vec(),
            sigma2_hat,
            sigma2_true: sig,
            eps_spent,
            rpca_converged: converged,
            rpca_degenerate: degenerate,
            train_loss,
            test_loss,
            test_accuracy,
        });
    }
    Ok(ExperimentResult {
        records,
        theta,
        ledger,
        clients,
    })
}
