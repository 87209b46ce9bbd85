//! The server/client round loop and the aggregation strategies.

mod client;
mod experiment;
mod weights;

pub use client::{build_population, minimum_epsilon_transform, ClientSpec, Population, PopulationSpec};
pub use experiment::{
    evaluate_pooled, run_experiment, ClientExecutor, ExperimentResult, ExperimentSpec, RoundRecord,
    Sequential, StrategyKind,
};
pub use weights::{
    aggregate, aggregated_noise_metric, dpfedavg_weights, oracle_weights, robust_hdp_weights,
    sample_participants, step_size_check, weiavg_weights, RobustHdpConfig, RobustHdpDiagnostics,
    StepSizeCheck, WeightVector, ENERGY_FLOOR,
};

#[cfg(test)]
mod tests;
