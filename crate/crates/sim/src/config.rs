//! The experiment configuration: a single JSON document.
//!
//! [`load_config`] parses, fills defaults and validates; every rejection
//! names the offending field. A resolved config is self-contained: CSV
//! paths are made absolute and `rpca.p_prime` is filled in.

use std::path::{Path, PathBuf};

use hdpfl_core::federation::StrategyKind;
use hdpfl_core::models_data::{Model, ModelSpec, PrivacyDistribution, SplitMethod, SplitSpec};
use hdpfl_core::rpca::{PcpConfig, Tuning};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::io;

/// Largest block height used by default for the row-block PCP scheme.
pub const DEFAULT_P_PRIME_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    pub rounds: usize,
    #[serde(default = "one")]
    pub fraction: f64,
    pub strategy: StrategyKind,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default = "iid")]
    pub split: SplitMethod,
    /// Name of a reference distribution (`dist1` … `dist9`); exclusive
    /// with `epsilons`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy_dist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    /// Multiplies every ε, sampled or explicit.
    #[serde(default = "one")]
    pub epsilon_scale: f64,
    /// Exactly one of `batch_size`, `batch_choices`, `batch_sizes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_choices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_sizes: Option<Vec<usize>>,
    #[serde(default = "one_epoch")]
    pub local_epochs: Epochs,
    #[serde(default = "default_clip")]
    pub clip: f64,
    pub step_size: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Train without noise; spent ε is reported as infinite.
    #[serde(default)]
    pub non_private: bool,
    #[serde(default)]
    pub rpca: RpcaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<Adversary>,
    /// Smoothness constant for the step-size diagnostic in the summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}
fn one_epoch() -> Epochs {
    Epochs::Uniform(1)
}
fn iid() -> SplitMethod {
    SplitMethod::Iid
}
fn default_clip() -> f64 {
    3.0
}
fn default_delta() -> f64 {
    1e-4
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    LinearSoftmax,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Gaussian class clusters whose means are `separation` apart.
    Synthetic {
        n_samples: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    /// Header `f0,…,label`. A relative path is taken relative to the config
    /// file.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
    },
}

/// Local epochs `K`, either shared or one per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epochs {
    Uniform(usize),
    PerClient(Vec<usize>),
}

/// `"auto"` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "AutoOrRaw", into = "AutoOrRaw")]
pub struct AutoOr(pub Tuning);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AutoOrRaw {
    Number(f64),
    Word(String),
}

impl TryFrom<AutoOrRaw> for AutoOr {
    type Error = String;

    fn try_from(raw: AutoOrRaw) -> std::result::Result<Self, String> {
        match raw {
            AutoOrRaw::Number(v) => Ok(AutoOr(Tuning::Fixed(v))),
            AutoOrRaw::Word(w) if w.eq_ignore_ascii_case("auto") => Ok(AutoOr(Tuning::Auto)),
            AutoOrRaw::Word(w) => Err(format!("expected \"auto\" or a number, got \"{w}\"")),
        }
    }
}

impl From<AutoOr> for AutoOrRaw {
    fn from(v: AutoOr) -> Self {
        match v.0 {
            Tuning::Auto => AutoOrRaw::Word("auto".into()),
            Tuning::Fixed(x) => AutoOrRaw::Number(x),
        }
    }
}

impl std::str::FromStr for AutoOr {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(AutoOr(Tuning::Auto));
        }
        s.parse::<f64>()
            .map(|v| AutoOr(Tuning::Fixed(v)))
            .map_err(|_| format!("expected auto or a number, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpcaConfig {
    /// Defaults to `min(p, 200 000)`.
    #[serde(default)]
    pub p_prime: Option<usize>,
    #[serde(default = "one_block")]
    pub q_blocks: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub lambda: AutoOr,
    #[serde(default)]
    pub mu: AutoOr,
}

fn one_block() -> usize {
    1
}
fn default_tol() -> f64 {
    1e-7
}
fn default_max_iters() -> usize {
    500
}

impl Default for RpcaConfig {
    fn default() -> Self {
        RpcaConfig {
            p_prime: None,
            q_blocks: 1,
            tol: default_tol(),
            max_iters: default_max_iters(),
            lambda: AutoOr::default(),
            mu: AutoOr::default(),
        }
    }
}

impl RpcaConfig {
    pub fn pcp(&self) -> PcpConfig {
        PcpConfig {
            lambda: self.lambda.0,
            mu: self.mu.0,
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

/// One client reports a privacy parameter other than the one it trains
/// with. Give exactly one of `reported_epsilon` or `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adversary {
    pub client: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
}

/// Parses a config document; errors carry the JSON path of the bad field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        HarnessError::config(field, e.into_inner().to_string())
    })
}

/// Reads, resolves and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(&io::read_text(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let DataConfig::Csv { path: p, .. } = &mut cfg.data {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::config(field, format!("{v} must be positive and finite")))
    }
}

impl ExperimentConfig {
    /// Input dimension and class count of the data.
    pub fn data_shape(&self) -> Result<(usize, usize)> {
        match &self.data {
            DataConfig::Synthetic { dim, classes, .. } => Ok((*dim, *classes)),
            DataConfig::Csv { path, classes } => {
                if !path.is_file() {
                    return Err(HarnessError::config(
                        "data.path",
                        format!("{} does not exist", path.display()),
                    ));
                }
                let d = io::read_dataset(path, *classes)?;
                Ok((d.dim(), d.classes()))
            }
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let (inputs, classes) = self.data_shape()?;
        Ok(match self.model {
            ModelConfig::LinearSoftmax => ModelSpec::LinearSoftmax { inputs, classes },
            ModelConfig::Mlp { hidden } => ModelSpec::Mlp {
                inputs,
                hidden,
                classes,
            },
        })
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            method: self.split,
            n_clients: self.n_clients,
        }
    }

    /// Fills derived defaults, then validates.
    pub fn resolve(&mut self) -> Result<()> {
        self.validate_static()?;
        let model = self.model_spec()?;
        let p = model.num_params();
        let p_prime = *self.rpca.p_prime.get_or_insert(p.min(DEFAULT_P_PRIME_CAP));
        if p_prime == 0 || p_prime > p {
            return Err(HarnessError::config("rpca.p_prime", format!("{p_prime} not in 1..={p}")));
        }
        let participants = (self.fraction * self.n_clients as f64).ceil() as usize;
        if p_prime < participants {
            return Err(HarnessError::config(
                "rpca.p_prime",
                format!("{p_prime} is smaller than the {participants} participants per round"),
            ));
        }
        if self.rpca.q_blocks == 0 || self.rpca.q_blocks > p / p_prime {
            return Err(HarnessError::config(
                "rpca.q_blocks",
                format!("{} not in 1..={}", self.rpca.q_blocks, p / p_prime),
            ));
        }
        let (_, classes) = self.data_shape()?;
        self.split_spec()
            .validate(classes)
            .map_err(|e| HarnessError::config("split", e.to_string()))
    }

    /// Checks that need no data.
    fn validate_static(&self) -> Result<()> {
        let n = self.n_clients;
        if n == 0 {
            return Err(HarnessError::config("n_clients", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(HarnessError::config("rounds", "must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(HarnessError::config("fraction", format!("{} not in (0, 1]", self.fraction)));
        }
        match (&self.privacy_dist, &self.epsilons) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::config("epsilons", "give either privacy_dist or epsilons, not both"))
            }
            (None, None) if !self.non_private => {
                return Err(HarnessError::config("privacy_dist", "need privacy_dist or epsilons"))
            }
            (Some(name), None) => {
                PrivacyDistribution::by_name(name)
                    .map_err(|e| HarnessError::config("privacy_dist", e.to_string()))?;
            }
            (None, Some(eps)) => {
                if eps.len() != n {
                    return Err(HarnessError::config(
                        "epsilons",
                        format!("has {} entries for {n} clients", eps.len()),
                    ));
                }
                for (i, e) in eps.iter().enumerate() {
                    positive(&format!("epsilons[{i}]"), *e)?;
                }
            }
            (None, None) => {}
        }
        positive("epsilon_scale", self.epsilon_scale)?;
        match (&self.batch_size, &self.batch_choices, &self.batch_sizes) {
            (Some(b), None, None) => {
                if *b == 0 {
                    return Err(HarnessError::config("batch_size", "must be at least 1"));
                }
            }
            (None, Some(c), None) => {
                if c.is_empty() || c.contains(&0) {
                    return Err(HarnessError::config("batch_choices", "need nonempty positive choices"));
                }
            }
            (None, None, Some(bs)) => {
                if bs.len() != n {
                    return Err(HarnessError::config(
                        "batch_sizes",
                        format!("has {} entries for {n} clients", bs.len()),
                    ));
                }
                if bs.contains(&0) {
                    return Err(HarnessError::config("batch_sizes", "entries must be at least 1"));
                }
            }
            _ => {
                return Err(HarnessError::config(
                    "batch_size",
                    "give exactly one of batch_size, batch_choices, batch_sizes",
                ))
            }
        }
        match &self.local_epochs {
            Epochs::Uniform(0) => return Err(HarnessError::config("local_epochs", "must be at least 1")),
            Epochs::PerClient(ks) if ks.len() != n => {
                return Err(HarnessError::config(
                    "local_epochs",
                    format!("has {} entries for {n} clients", ks.len()),
                ))
            }
            Epochs::PerClient(ks) if ks.contains(&0) => {
                return Err(HarnessError::config("local_epochs", "entries must be at least 1"))
            }
            _ => {}
        }
        positive("clip", self.clip)?;
        positive("step_size", self.step_size)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(HarnessError::config("delta", format!("{} not in (0, 1)", self.delta)));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(HarnessError::config("test_fraction", "must be in [0, 1)"));
        }
        if let Some(b) = self.beta {
            positive("beta", b)?;
        }
        if let ModelConfig::Mlp { hidden: 0 } = self.model {
            return Err(HarnessError::config("model.hidden", "must be at least 1"));
        }
        if let DataConfig::Synthetic {
            n_samples,
            dim,
            classes,
            separation,
        } = self.data
        {
            if n_samples < n {
                return Err(HarnessError::config("data.n_samples", "fewer samples than clients"));
            }
            if dim == 0 {
                return Err(HarnessError::config("data.dim", "must be at least 1"));
            }
            if classes < 2 {
                return Err(HarnessError::config("data.classes", "need at least two classes"));
            }
            if !(separation >= 0.0 && separation.is_finite()) {
                return Err(HarnessError::config("data.separation", "must be finite and nonnegative"));
            }
        }
        if let Some(a) = &self.adversary {
            if a.client >= n {
                return Err(HarnessError::config("adversary.client", format!("{} not in 0..{n}", a.client)));
            }
            match (a.reported_epsilon, a.factor) {
                (Some(e), None) => positive("adversary.reported_epsilon", e)?,
                (None, Some(f)) => positive("adversary.factor", f)?,
                _ => {
                    return Err(HarnessError::config(
                        "adversary",
                        "give exactly one of reported_epsilon or factor",
                    ))
                }
            }
        }
        positive("rpca.tol", self.rpca.tol)?;
        if self.rpca.max_iters == 0 {
            return Err(HarnessError::config("rpca.max_iters", "must be at least 1"));
        }
        for (name, t) in [("rpca.lambda", self.rpca.lambda.0), ("rpca.mu", self.rpca.mu.0)] {
            if let Tuning::Fixed(v) = t {
                positive(name, v)?;
            }
        }
        Ok(())
    }
}
