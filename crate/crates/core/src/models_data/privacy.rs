use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::{Error, Result};

/// Gaussian draws below this value are rejected and redrawn.
pub const EPSILON_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    /// The second parameter is a variance, not a standard deviation.
    Gaussian { mean: f64, variance: f64 },
    Uniform { low: f64, high: f64 },
}

impl Component {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Component::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    let v = mean + sd * z;
                    if v >= EPSILON_FLOOR {
                        return v;
                    }
                }
            }
            Component::Uniform { low, high } => rng.random_range(low..=high),
        }
    }
}

/// A finite mixture of privacy-parameter distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyDistribution {
    pub name: String,
    pub components: Vec<(Component, f64)>,
}

fn g(mean: f64, variance: f64) -> Component {
    Component::Gaussian { mean, variance }
}

fn u(low: f64, high: f64) -> Component {
    Component::Uniform { low, high }
}

pub const NAMES: [&str; 9] = [
    "dist1", "dist2", "dist3", "dist4", "dist5", "dist6", "dist7", "dist8", "dist9",
];

impl PrivacyDistribution {
    pub fn new(name: impl Into<String>, components: Vec<(Component, f64)>) -> Result<Self> {
        let dist = PrivacyDistribution {
            name: name.into(),
            components,
        };
        dist.validate()?;
        Ok(dist)
    }

    /// One of the nine reference distributions, `dist1` … `dist9`
    /// (case-insensitive).
    pub fn by_name(name: &str) -> Result<Self> {
        let key = name.to_ascii_lowercase();
        let components = match key.as_str() {
            "dist1" => vec![(g(2.0, 1.0), 1.0)],
            "dist2" => vec![(g(0.2, 0.01), 0.2), (g(1.0, 0.1), 0.6), (g(5.0, 1.0), 0.2)],
            "dist3" => vec![(u(0.2, 5.0), 1.0)],
            "dist4" => vec![(g(0.2, 0.01), 0.2), (g(0.5, 0.1), 0.6), (g(2.0, 1.0), 0.2)],
            "dist5" => vec![(u(0.2, 2.0), 1.0)],
            "dist6" => vec![(g(0.2, 0.01), 0.3), (g(0.5, 0.1), 0.5), (g(1.0, 0.1), 0.2)],
            "dist7" => vec![(u(0.2, 1.0), 1.0)],
            "dist8" => vec![(g(0.2, 0.01), 0.6), (g(0.5, 0.1), 0.4)],
            "dist9" => vec![(u(0.2, 0.5), 1.0)],
            _ => return Err(Error::UnknownDistribution(name.to_string())),
        };
        Ok(PrivacyDistribution {
            name: key,
            components,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Empty("privacy distribution components"));
        }
        let mut total = 0.0;
        for (c, w) in &self.components {
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(invalid("weight", "mixture weights must be nonnegative"));
            }
            total += w;
            match *c {
                Component::Gaussian { mean, variance } => {
                    if !mean.is_finite() || !(variance >= 0.0) || !variance.is_finite() {
                        return Err(invalid("variance", "gaussian needs finite mean, variance >= 0"));
                    }
                    if variance == 0.0 && mean < EPSILON_FLOOR {
                        return Err(invalid("mean", "degenerate gaussian below the epsilon floor"));
                    }
                }
                Component::Uniform { low, high } => {
                    if !(low > 0.0 && low <= high && high.is_finite()) {
                        return Err(invalid("low", "uniform bounds must satisfy 0 < low <= high"));
                    }
                }
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("weight", "mixture weights must sum to 1"));
        }
        Ok(())
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut x: f64 = rng.random();
        for (k, (_, w)) in self.components.iter().enumerate() {
            if x < *w {
                return k;
            }
            x -= w;
        }
        self.components.len() - 1
    }

    /// `n` draws together with the index of the mixture component each
    /// came from.
    pub fn sample_with_components<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(f64, usize)> {
        (0..n)
            .map(|_| {
                let k = self.pick(rng);
                (self.components[k].0.sample(rng), k)
            })
            .collect()
    }
}

pub fn sample_privacy_params<R: Rng + ?Sized>(
    dist: &PrivacyDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    dist.sample_with_components(n, rng)
        .into_iter()
        .map(|(eps, _)| eps)
        .collect()
}

/// Uniform draws with replacement from `choices`.
pub fn sample_batch_sizes<R: Rng + ?Sized>(choices: &[usize], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if choices.is_empty() {
        return Err(Error::Empty("batch size choices"));
    }
    Ok((0..n).map(|_| choices[rng.random_range(0..choices.len())]).collect())
}
