use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hdpfl_core::accountant::{calibrate_noise_scale, AccountingInputs, PrivacyTarget};
use hdpfl_core::rpca::{blockwise_decompose, PcpConfig, Tuning};
use hdpfl_core::DenseMatrix;
use serde_json::json;

use crate::bundle::{report_weights, write_bundle};
use crate::config::{load_config, AutoOr};
use crate::error::{HarnessError, Result};
use crate::io;
use crate::simulate::{simulate, Rayon};

#[derive(Debug, Parser)]
#[command(name = "hdpfl", version, about = "Heterogeneous differentially-private federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write a metrics bundle.
    Simulate(SimulateArgs),
    /// Compare aggregation weights for one round of a bundle.
    Weights(WeightsArgs),
    /// Low-rank plus sparse decomposition of a CSV matrix.
    Rpca(RpcaArgs),
    /// Noise scale for a privacy target.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, required_unless_present = "print_config")]
    pub seed: Option<u64>,
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub round: usize,
    /// CSV destination; defaults to `<bundle>/weights_round_<e>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RpcaArgs {
    /// Matrix CSV, one row per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for L.csv, S.csv and energies.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "auto")]
    pub lambda: AutoOr,
    #[arg(long, default_value = "auto")]
    pub mu: AutoOr,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Row-block height; defaults to all rows.
    #[arg(long)]
    pub p_prime: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub q_blocks: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    /// Batch-size ratio b/N.
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub steps_per_round: u64,
    #[arg(long)]
    pub rounds: u64,
}

/// Runs a parsed command, writing its JSON result to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let value = match cli.command {
        Command::Simulate(a) => run_simulate(a)?,
        Command::Weights(a) => serde_json::to_value(report_weights(&a.bundle, a.round, a.out.as_deref())?)
            .map_err(|e| HarnessError::Usage(e.to_string()))?,
        Command::Rpca(a) => run_rpca(&a)?,
        Command::Calibrate(a) => run_calibrate(&a)?,
    };
    println!("{}", serde_json::to_string_pretty(&value).map_err(|e| HarnessError::Usage(e.to_string()))?);
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<serde_json::Value> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.print_config {
        return serde_json::to_value(&cfg).map_err(|e| HarnessError::Usage(e.to_string()));
    }
    let out = a.out.ok_or_else(|| HarnessError::Usage("--out is required".into()))?;
    let outcome = simulate(&cfg, &Rayon)?;
    let summary = write_bundle(&out, &cfg, &outcome)?;
    Ok(json!({
        "out": out,
        "strategy": summary.strategy,
        "final_test_accuracy": summary.final_test_accuracy,
        "system_privacy": summary.system_privacy,
        "wall_time_secs": summary.wall_time_secs,
    }))
}

fn run_rpca(a: &RpcaArgs) -> Result<serde_json::Value> {
    let m = io::read_matrix(&a.input)?;
    let cfg = PcpConfig {
        lambda: a.lambda.0,
        mu: a.mu.0,
        tol: a.tol,
        max_iters: a.max_iters,
    };
    let p_prime = a.p_prime.unwrap_or(m.rows());
    let (est, blocks) = blockwise_decompose(&m, p_prime, a.q_blocks, &cfg)?;
    // Only the decomposed rows are written; with the defaults that is all of them.
    let stack = |part: fn(&hdpfl_core::rpca::Decomposition) -> &DenseMatrix| -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(blocks.len() * p_prime * m.cols());
        for b in &blocks {
            data.extend_from_slice(part(b).as_slice());
        }
        Ok(DenseMatrix::from_vec(blocks.len() * p_prime, m.cols(), data)?)
    };
    io::ensure_dir(&a.out)?;
    io::write_matrix(&a.out.join("L.csv"), &stack(|d| &d.low_rank)?)?;
    io::write_matrix(&a.out.join("S.csv"), &stack(|d| &d.sparse)?)?;
    io::write_json(&a.out.join("energies.json"), &est.energies)?;
    let tuned = |t: Tuning, used: f64| match t {
        Tuning::Auto => json!({ "auto": used }),
        Tuning::Fixed(v) => json!(v),
    };
    Ok(json!({
        "rows": m.rows(),
        "cols": m.cols(),
        "rows_decomposed": blocks.len() * p_prime,
        "blocks": blocks.iter().map(|b| json!({
            "iters_used": b.iters_used,
            "final_residual": b.final_residual,
            "converged": b.converged,
        })).collect::<Vec<_>>(),
        "lambda": tuned(cfg.lambda, blocks[0].lambda),
        "mu": tuned(cfg.mu, blocks[0].mu),
        "converged": est.converged,
        "energies": est.energies,
        "out": a.out,
    }))
}

fn run_calibrate(a: &CalibrateArgs) -> Result<serde_json::Value> {
    let target = PrivacyTarget::new(a.epsilon, a.delta)?;
    let inputs = AccountingInputs {
        q: a.q,
        steps_per_round: a.steps_per_round,
        total_rounds: a.rounds,
    };
    let cal = calibrate_noise_scale(target, inputs)?;
    Ok(json!({
        "z": cal.z,
        "achieved_epsilon": cal.achieved_epsilon,
        "floor_clamped": cal.floor_clamped,
        "epsilon": a.epsilon,
        "delta": a.delta,
        "q": a.q,
        "steps": inputs.total_steps(),
    }))
}

/// Parses `args` (including the program name) and runs the command.
///
/// Returns the process exit code; errors are written to stderr as JSON.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let body = json!({ "error": { "kind": "usage", "message": e.render().to_string().trim() } });
            eprintln!("{body}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

