//! The metrics bundle written by `simulate` and read back by `weights`.
//!
//! ```text
//! <out>/rounds.csv    one row per (round, participant)
//! <out>/curve.csv     one row per round, plot-ready
//! <out>/summary.json  final metrics, per-round flags, privacy, wall time
//! <out>/config.json   the resolved config
//! <out>/split.json    client assignment and privacy parameters
//! ```
//!
//! Everything except `summary.json`'s `wall_time_secs` is a deterministic
//! function of the config and seed.

use std::path::{Path, PathBuf};

use hdpfl_core::accountant::{system_privacy, PrivacyTarget};
use hdpfl_core::federation::{step_size_check, ClientSpec, StepSizeCheck, StrategyKind, WeightVector};
use hdpfl_core::models_data::Model;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io::{self, format_f64};
use crate::simulate::Outcome;

pub const ROUNDS_HEADER: [&str; 11] = [
    "round",
    "client",
    "weight",
    "sigma2_true",
    "sigma2_hat",
    "eps_spent",
    "loss",
    "acc",
    "w_oracle",
    "w_weiavg",
    "w_dpfedavg",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub rounds: usize,
    pub n_clients: usize,
    pub num_params: usize,
    pub final_test_accuracy: f64,
    pub final_test_loss: f64,
    pub final_train_loss: f64,
    /// `Σ w_i² σ_i² / (p η²)` per round for the weights used.
    pub noise_metric: Vec<f64>,
    pub oracle_noise_metric: Vec<f64>,
    /// `null` for strategies that do not run PCP.
    pub rpca_converged: Vec<Option<bool>>,
    pub rpca_degenerate: Vec<Option<bool>>,
    /// `null` for non-private runs.
    pub system_privacy: Option<PrivacyTarget>,
    pub clients: Vec<ClientSpec>,
    pub batch_clamped: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size_check: Option<StepSizeCheck>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub method: hdpfl_core::models_data::SplitMethod,
    pub clients: Vec<SplitEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEntry {
    pub client: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Indices into the source dataset; the first `train_size` are training
    /// samples.
    pub indices: Vec<usize>,
}

pub fn summarize(cfg: &ExperimentConfig, out: &Outcome) -> Result<Summary> {
    let records = &out.result.records;
    let last = records.last().ok_or(HarnessError::Usage("no rounds were run".into()))?;
    let private = out.result.clients.iter().all(|c| c.noise_scale > 0.0);
    let step_size_check = match cfg.beta {
        Some(beta) => {
            let steps: Vec<u64> = out.result.clients.iter().map(|c| c.steps_per_round()).collect();
            Some(step_size_check(cfg.step_size, beta, &steps)?)
        }
        None => None,
    };
    Ok(Summary {
        strategy: cfg.strategy,
        seed: cfg.seed,
        rounds: cfg.rounds,
        n_clients: cfg.n_clients,
        num_params: out.spec.model.num_params(),
        final_test_accuracy: last.test_accuracy,
        final_test_loss: last.test_loss,
        final_train_loss: last.train_loss,
        noise_metric: records.iter().map(|r| r.noise_metric).collect(),
        oracle_noise_metric: records.iter().map(|r| r.oracle_noise_metric).collect(),
        rpca_converged: records.iter().map(|r| r.rpca_converged).collect(),
        rpca_degenerate: records.iter().map(|r| r.rpca_degenerate).collect(),
        system_privacy: if private {
            Some(system_privacy(&out.result.ledger)?)
        } else {
            None
        },
        clients: out.result.clients.clone(),
        batch_clamped: out.population.batch_clamped.clone(),
        step_size_check,
        wall_time_secs: out.wall_time_secs,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| HarnessError::Csv {
        path: path.to_path_buf(),
        line: None,
        message: e.to_string(),
    })
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e: csv::Error| HarnessError::Csv {
        path: path.to_path_buf(),
        line: None,
        message: e.to_string(),
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_bundle(dir: &Path, cfg: &ExperimentConfig, out: &Outcome) -> Result<Summary> {
    io::ensure_dir(dir)?;
    let records = &out.result.records;
    let rows = records.iter().flat_map(|r| {
        r.participants.iter().enumerate().map(move |(j, &client)| {
            vec![
                r.round.to_string(),
                client.to_string(),
                format_f64(r.weights[j]),
                format_f64(r.sigma2_true[j]),
                r.sigma2_hat.as_ref().map_or(String::new(), |s| format_f64(s[j])),
                format_f64(r.eps_spent[j]),
                format_f64(r.test_loss),
                format_f64(r.test_accuracy),
                format_f64(r.oracle_weights[j]),
                format_f64(r.weiavg_weights[j]),
                format_f64(r.dpfedavg_weights[j]),
            ]
        })
    });
    write_rows(&dir.join("rounds.csv"), &ROUNDS_HEADER, rows)?;

    let name = cfg.strategy.name().to_string();
    let curve = records.iter().map(|r| {
        vec![
            r.round.to_string(),
            name.clone(),
            format_f64(r.train_loss),
            format_f64(r.test_loss),
            format_f64(r.test_accuracy),
            format_f64(r.noise_metric),
            format_f64(r.oracle_noise_metric),
        ]
    });
    write_rows(
        &dir.join("curve.csv"),
        &[
            "round",
            "strategy",
            "train_loss",
            "test_loss",
            "test_accuracy",
            "noise_metric",
            "oracle_noise_metric",
        ],
        curve,
    )?;

    let manifest = SplitManifest {
        method: cfg.split,
        clients: out
            .population
            .assignment
            .iter()
            .enumerate()
            .map(|(i, idx)| SplitEntry {
                client: i,
                train_size: out.population.train[i].len(),
                test_size: out.population.test[i].as_ref().map_or(0, |d| d.len()),
                indices: idx.clone(),
            })
            .collect(),
    };
    io::write_json(&dir.join("split.json"), &manifest)?;
    io::write_json(&dir.join("config.json"), cfg)?;
    let summary = summarize(cfg, out)?;
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub client: usize,
    pub weight: f64,
    pub sigma2_true: f64,
    pub sigma2_hat: Option<f64>,
    pub eps_spent: f64,
    pub loss: f64,
    pub acc: f64,
    pub w_oracle: f64,
    pub w_weiavg: f64,
    pub w_dpfedavg: f64,
}

pub fn read_rounds(path: &Path) -> Result<Vec<RoundRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Csv {
            path: path.to_path_buf(),
            line: None,
            message: format!("{other:?}"),
        },
    })?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| HarnessError::Csv {
                path: path.to_path_buf(),
                line: e.position().map(|p| p.line()),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join("summary.json");
    serde_json::from_str(&io::read_text(&path)?).map_err(|e| HarnessError::Csv {
        path,
        line: Some(e.line() as u64),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightReport {
    pub round: usize,
    pub strategy: StrategyKind,
    /// `max_i |w_i - w_i^oracle|` for the weights the run used.
    pub linf_gap: f64,
    pub csv: PathBuf,
}

/// Writes the per-client weight comparison for round `e` and returns the
/// L∞ gap between the run's weights and the oracle weights.
///
/// The `w_robust_hdp` and `sigma2_hat` columns are empty unless the run
/// used Robust-HDP.
pub fn report_weights(bundle: &Path, round: usize, out: Option<&Path>) -> Result<WeightReport> {
    let summary = read_summary(bundle)?;
    let rows = read_rounds(&bundle.join("rounds.csv"))?;
    let available = rows.iter().map(|r| r.round).max().unwrap_or(0);
    let mine: Vec<&RoundRow> = rows.iter().filter(|r| r.round == round).collect();
    if mine.is_empty() {
        return Err(HarnessError::MissingRound { round, available });
    }
    let used = WeightVector::normalize(mine.iter().map(|r| r.weight).collect())?;
    let oracle = WeightVector::normalize(mine.iter().map(|r| r.w_oracle).collect())?;
    let linf_gap = used.linf_distance(&oracle);

    let robust = summary.strategy == StrategyKind::RobustHdp;
    let csv_path = out.map_or_else(|| bundle.join(format!("weights_round_{round}.csv")), Path::to_path_buf);
    let table = mine.iter().map(|r| {
        vec![
            r.client.to_string(),
            if robust { format_f64(r.weight) } else { String::new() },
            format_f64(r.w_oracle),
            format_f64(r.w_weiavg),
            format_f64(r.w_dpfedavg),
            r.sigma2_hat.map_or(String::new(), format_f64),
            format_f64(r.sigma2_true),
        ]
    });
    write_rows(
        &csv_path,
        &[
            "client",
            "w_robust_hdp",
            "w_oracle",
            "w_weiavg",
            "w_dpfedavg",
            "sigma2_hat",
            "sigma2_true",
        ],
        table,
    )?;
    Ok(WeightReport {
        round,
        strategy: summary.strategy,
        linf_gap,
        csv: csv_path,
    })
}
