use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::invalid;
use crate::{Error, Result};

const SHARD_ATTEMPTS: usize = 200;
const DIRICHLET_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SplitMethod {
    Iid,
    /// Label-sorted shards dealt to clients so that no client sees more
    /// than `max_labels_per_client` classes.
    Sharding {
        max_labels_per_client: usize,
        shards_per_client: usize,
    },
    /// Each class is divided among clients by a symmetric Dirichlet draw.
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(flatten)]
    pub method: SplitMethod,
    pub n_clients: usize,
}

impl SplitSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.n_clients == 0 {
            return Err(invalid("n_clients", "must be at least 1"));
        }
        match self.method {
            SplitMethod::Iid => Ok(()),
            SplitMethod::Sharding {
                max_labels_per_client,
                shards_per_client,
            } => {
                if max_labels_per_client == 0 || max_labels_per_client > classes {
                    return Err(invalid(
                        "max_labels_per_client",
                        format!("{max_labels_per_client} not in 1..={classes}"),
                    ));
                }
                if shards_per_client == 0 {
                    return Err(invalid("shards_per_client", "must be at least 1"));
                }
                Ok(())
            }
            SplitMethod::Dirichlet { alpha } => {
                if alpha > 0.0 && alpha.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("alpha", "must be positive"))
                }
            }
        }
    }
}

/// Sample indices for each client. The index sets are disjoint and cover
/// every sample.
pub fn split_indices<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    spec: &SplitSpec,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    spec.validate(classes)?;
    let n = labels.len();
    let clients = spec.n_clients;
    if n < clients {
        return Err(Error::InfeasibleSplit(format!(
            "{n} samples cannot cover {clients} clients"
        )));
    }
    match spec.method {
        SplitMethod::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            Ok(chunk_evenly(&order, clients))
        }
        SplitMethod::Sharding {
            max_labels_per_client,
            shards_per_client,
        } => shard_split(labels, clients, max_labels_per_client, shards_per_client, rng),
        SplitMethod::Dirichlet { alpha } => dirichlet_split(labels, classes, clients, alpha, rng),
    }
}

pub fn split<R: Rng + ?Sized>(data: &Dataset, spec: &SplitSpec, rng: &mut R) -> Result<Vec<Dataset>> {
    split_indices(data.labels(), data.classes(), spec, rng)?
        .iter()
        .map(|idx| data.subset(idx))
        .collect()
}

/// `parts` contiguous chunks whose sizes differ by at most one.
fn chunk_evenly(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    (0..parts)
        .map(|j| items[j * n / parts..(j + 1) * n / parts].to_vec())
        .collect()
}

fn shard_split<R: Rng + ?Sized>(
    labels: &[usize],
    clients: usize,
    max_labels: usize,
    shards_per_client: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let total_shards = clients * shards_per_client;
    if total_shards > labels.len() {
        return Err(Error::InfeasibleSplit(format!(
            "{total_shards} shards requested from {} samples",
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| labels[i]);
    let shards = chunk_evenly(&order, total_shards);
    let shard_labels: Vec<BTreeSet<usize>> = shards
        .iter()
        .map(|s| s.iter().map(|&i| labels[i]).collect())
        .collect();

    'attempt: for _ in 0..SHARD_ATTEMPTS {
        let mut pool: Vec<usize> = (0..total_shards).collect();
        pool.shuffle(rng);
        let mut assignment = Vec::with_capacity(clients);
        for _ in 0..clients {
            let mut seen = BTreeSet::new();
            let mut mine = Vec::with_capacity(shards_per_client);
            let mut k = 0;
            while mine.len() < shards_per_client && k < pool.len() {
                let candidate = pool[k];
                let merged = seen.union(&shard_labels[candidate]).count();
                if merged <= max_labels {
                    seen.extend(shard_labels[candidate].iter().copied());
                    mine.push(candidate);
                    pool.swap_remove(k);
                } else {
                    k += 1;
                }
            }
            if mine.len() < shards_per_client {
                continue 'attempt;
            }
            assignment.push(mine);
        }
        return Ok(assignment
            .into_iter()
            .map(|ids| ids.iter().flat_map(|&s| shards[s].iter().copied()).collect())
            .collect());
    }
    Err(Error::InfeasibleSplit(format!(
        "could not deal {shards_per_client} shards per client with at most {max_labels} labels"
    )))
}

fn dirichlet_split<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| invalid("alpha", "must be positive"))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for _ in 0..DIRICHLET_ATTEMPTS {
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); clients];
        for members in &mut by_class {
            if members.is_empty() {
                continue;
            }
            members.shuffle(rng);
            let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            let n_k = members.len() as f64;
            let mut cum = 0.0;
            let mut start = 0;
            for (j, d) in draws.iter().enumerate() {
                cum += d;
                let end = if j + 1 == clients {
                    members.len()
                } else {
                    libm::round((cum / total) * n_k) as usize
                };
                let end = end.clamp(start, members.len());
                parts[j].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if parts.iter().all(|p| !p.is_empty()) {
            return Ok(parts);
        }
    }
    Err(Error::InfeasibleSplit(format!(
        "dirichlet({alpha}) left a client empty in {DIRICHLET_ATTEMPTS} attempts"
    )))
}
