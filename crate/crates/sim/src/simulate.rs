//! From a resolved config to an experiment result.
//!
//! Setup randomness comes from `(seed, "setup", k, 0)` streams, one per
//! concern: 0 data, 2 privacy parameters, 3 batch sizes, 4 split and
//! train/test assignment (1 is the model initialisation inside the core).

use hdpfl_core::federation::{
    build_population, run_experiment, ClientExecutor, ExperimentResult, ExperimentSpec, Population,
    PopulationSpec, RobustHdpConfig,
};
use hdpfl_core::models_data::{
    generate_synthetic, sample_batch_sizes, sample_privacy_params, Dataset, PrivacyDistribution,
};
use hdpfl_core::rng::{self, SETUP};
use hdpfl_core::dp_local::ParamVector;
use rayon::prelude::*;

use crate::config::{DataConfig, Epochs, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::io;

const DATA_STREAM: u64 = 0;
const EPSILON_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

/// Runs client jobs on the rayon pool. Results come back in job order, so
/// output does not depend on the thread count.
pub struct Rayon;

impl ClientExecutor for Rayon {
    fn execute(
        &self,
        jobs: usize,
        job: &(dyn Fn(usize) -> hdpfl_core::Result<ParamVector> + Sync),
    ) -> Vec<hdpfl_core::Result<ParamVector>> {
        (0..jobs).into_par_iter().map(job).collect()
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataConfig::Synthetic {
            n_samples,
            dim,
            classes,
            separation,
        } => {
            let mut r = rng::stream(cfg.seed, SETUP, DATA_STREAM, 0);
            Ok(generate_synthetic(*n_samples, *dim, *classes, *separation, &mut r)?)
        }
        DataConfig::Csv { path, classes } => io::read_dataset(path, *classes),
    }
}

/// True and reported ε per client, after scaling and the adversary.
pub fn privacy_parameters(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cfg.n_clients;
    let raw = match (&cfg.epsilons, &cfg.privacy_dist) {
        (Some(eps), _) => eps.clone(),
        (None, Some(name)) => {
            let dist = PrivacyDistribution::by_name(name)?;
            sample_privacy_params(&dist, n, &mut rng::stream(cfg.seed, SETUP, EPSILON_STREAM, 0))
        }
        // non-private runs without any ε
        (None, None) => vec![1.0; n],
    };
    let eps: Vec<f64> = raw.iter().map(|e| e * cfg.epsilon_scale).collect();
    let mut reported = eps.clone();
    if let Some(a) = &cfg.adversary {
        reported[a.client] = match (a.reported_epsilon, a.factor) {
            (Some(e), _) => e,
            (None, Some(f)) => f * eps[a.client],
            (None, None) => return Err(HarnessError::config("adversary", "no reported value")),
        };
    }
    Ok((eps, reported))
}

pub fn batch_sizes(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    let n = cfg.n_clients;
    match (&cfg.batch_size, &cfg.batch_choices, &cfg.batch_sizes) {
        (Some(b), _, _) => Ok(vec![*b; n]),
        (_, Some(choices), _) => Ok(sample_batch_sizes(
            choices,
            n,
            &mut rng::stream(cfg.seed, SETUP, BATCH_STREAM, 0),
        )?),
        (_, _, Some(bs)) => Ok(bs.clone()),
        _ => Err(HarnessError::config("batch_size", "no batch size given")),
    }
}

pub fn local_epochs(cfg: &ExperimentConfig) -> Vec<usize> {
    match &cfg.local_epochs {
        Epochs::Uniform(k) => vec![*k; cfg.n_clients],
        Epochs::PerClient(ks) => ks.clone(),
    }
}

/// Data, split and calibrated clients, before any training.
pub fn setup(cfg: &ExperimentConfig) -> Result<(ExperimentSpec, Population)> {
    let data = load_data(cfg)?;
    let (epsilons, reported_epsilons) = privacy_parameters(cfg)?;
    let pop_spec = PopulationSpec {
        epsilons,
        reported_epsilons,
        batch_sizes: batch_sizes(cfg)?,
        local_epochs: local_epochs(cfg),
        delta: cfg.delta,
        rounds: cfg.rounds,
        test_fraction: cfg.test_fraction,
        non_private: cfg.non_private,
    };
    let population = build_population(
        &data,
        &cfg.split_spec(),
        &pop_spec,
        &mut rng::stream(cfg.seed, SETUP, SPLIT_STREAM, 0),
    )?;
    let spec = ExperimentSpec {
        model: cfg.model_spec()?,
        clients: population.clients.clone(),
        train: population.train.clone(),
        test: population.test.clone(),
        rounds: cfg.rounds,
        fraction: cfg.fraction,
        strategy: cfg.strategy,
        clip: cfg.clip,
        step_size: cfg.step_size,
        robust: RobustHdpConfig {
            pcp: cfg.rpca.pcp(),
            p_prime: cfg.rpca.p_prime,
            q_blocks: cfg.rpca.q_blocks,
        },
        seed: cfg.seed,
    };
    Ok((spec, population))
}

pub struct Outcome {
    pub spec: ExperimentSpec,
    pub population: Population,
    pub result: ExperimentResult,
    pub wall_time_secs: f64,
}

/// Runs one experiment. `cfg` must be resolved.
pub fn simulate<E: ClientExecutor + ?Sized>(cfg: &ExperimentConfig, exec: &E) -> Result<Outcome> {
    let start = std::time::Instant::now();
    let (spec, population) = setup(cfg)?;
    let result = run_experiment(&spec, exec)?;
    Ok(Outcome {
        spec,
        population,
        result,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
