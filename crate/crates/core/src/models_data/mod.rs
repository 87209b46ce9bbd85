//! Toy models, synthetic data, federated splits and privacy samplers.

mod dataset;
mod model;
pub mod privacy;
pub mod split;

pub use dataset::{generate_synthetic, Dataset};
pub use model::{evaluate, per_sample_gradients, Model, ModelSpec};
pub use privacy::{sample_batch_sizes, sample_privacy_params, PrivacyDistribution};
pub use split::{split, split_indices, SplitMethod, SplitSpec};
