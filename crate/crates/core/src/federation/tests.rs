use super::*;
use crate::accountant::{epsilon_spent, system_privacy};
use crate::models_data::{generate_synthetic, ModelSpec, SplitMethod, SplitSpec};
use crate::rpca::planted;
use crate::{DenseMatrix, Error};
use alloc::vec;
use alloc::vec::Vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Minimizes `Σ w² σ²` on the simplex by projected gradient descent.
fn projected_gradient_minimizer(sigma2: &[f64]) -> Vec<f64> {
    let m = sigma2.len();
    let mut w = vec![1.0 / m as f64; m];
    let lmax = sigma2.iter().copied().fold(0.0, f64::max);
    let step = 0.5 / lmax;
    for _ in 0..200_000 {
        let y: Vec<f64> = w.iter().zip(sigma2).map(|(wi, s)| wi - step * 2.0 * wi * s).collect();
        w = project_simplex(&y);
    }
    w
}

fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, v) in u.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

#[test]
fn oracle_weight_examples() {
    assert!(close(oracle_weights(&[1.0, 1.0, 2.0]).unwrap().as_slice(), &[0.4, 0.4, 0.2], 1e-15));
    assert!(close(oracle_weights(&[3.0; 4]).unwrap().as_slice(), &[0.25; 4], 1e-15));
    assert!(oracle_weights(&[1.0, 0.0]).is_err());
    assert!(oracle_weights(&[1.0, -2.0]).is_err());
}

#[test]
fn oracle_weights_match_numerical_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sigma2: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..5.0)).collect();
    let want = projected_gradient_minimizer(&sigma2);
    assert!(close(oracle_weights(&sigma2).unwrap().as_slice(), &want, 1e-6));
}

#[test]
fn baseline_weight_examples() {
    assert!(close(weiavg_weights(&[1.0, 1.0, 2.0]).unwrap().as_slice(), &[0.25, 0.25, 0.5], 1e-15));
    assert_eq!(weiavg_weights(&[0.7]).unwrap().as_slice(), &[1.0]);
    assert!(weiavg_weights(&[1.0, 0.0]).is_err());
    let before = weiavg_weights(&[1.0, 2.0, 3.0]).unwrap().as_slice()[1];
    let after = weiavg_weights(&[1.0, 4.0, 3.0]).unwrap().as_slice()[1];
    assert!(after > before);

    assert!(close(dpfedavg_weights(&[100, 300]).unwrap().as_slice(), &[0.25, 0.75], 1e-15));
    assert!(close(dpfedavg_weights(&[50; 5]).unwrap().as_slice(), &[0.2; 5], 1e-15));
    assert!(dpfedavg_weights(&[0, 1]).is_err());
}

proptest! {
    #[test]
    fn weights_lie_on_the_simplex(values in proptest::collection::vec(0.01f64..100.0, 1..30)) {
        let sizes: Vec<usize> = values.iter().map(|v| (*v * 10.0) as usize + 1).collect();
        for w in [
            oracle_weights(&values).unwrap(),
            weiavg_weights(&values).unwrap(),
            dpfedavg_weights(&sizes).unwrap(),
        ] {
            prop_assert!(w.as_slice().iter().all(|x| *x >= 0.0));
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn oracle_minimizes_noise_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(2..12);
        let sigma2: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..10.0)).collect();
        let best = aggregated_noise_metric(oracle_weights(&sigma2).unwrap().as_slice(), &sigma2, 100, 0.1).unwrap();
        let other: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let other = WeightVector::normalize(other).unwrap();
        let metric = aggregated_noise_metric(other.as_slice(), &sigma2, 100, 0.1).unwrap();
        prop_assert!(best <= metric * (1.0 + 1e-12));
    }
}

#[test]
fn noise_metric_examples() {
    assert!((aggregated_noise_metric(&[1.0], &[2.0], 4, 0.5).unwrap() - 2.0).abs() < 1e-15);
    let sigma2 = [1.5; 4];
    let uniform = aggregated_noise_metric(&[0.25; 4], &sigma2, 10, 0.1).unwrap();
    let skewed = aggregated_noise_metric(&[0.4, 0.2, 0.2, 0.2], &sigma2, 10, 0.1).unwrap();
    assert!(uniform < skewed);
    assert!(aggregated_noise_metric(&[1.0], &[1.0, 2.0], 1, 1.0).is_err());
}

#[test]
fn aggregate_examples() {
    let theta = [1.0, -2.0, 0.5];
    let v = [0.3, 0.1, -0.7];
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let m = DenseMatrix::from_columns(&[&v, &neg]).unwrap();
    let out = aggregate(&theta, &m, &WeightVector::uniform(2).unwrap()).unwrap();
    assert_eq!(out, theta.to_vec());
    let one_hot = WeightVector::normalize(vec![0.0, 1.0]).unwrap();
    let out = aggregate(&theta, &m, &one_hot).unwrap();
    let want: Vec<f64> = theta.iter().zip(&neg).map(|(a, b)| a + b).collect();
    assert_eq!(out, want);
    assert!(aggregate(&theta[..2], &m, &one_hot).is_err());
    assert!(aggregate(&theta, &m, &WeightVector::uniform(3).unwrap()).is_err());
}

#[test]
fn aggregate_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p, m) = (37, 6);
    let theta: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let updates = planted::low_rank(p, m, m, &mut rng);
    let w = WeightVector::normalize((0..m).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let got = aggregate(&theta, &updates, &w).unwrap();
    for r in 0..p {
        let mut acc = 0.0;
        for j in 0..m {
            acc += w.as_slice()[j] * updates.get(r, j);
        }
        assert_eq!(got[r], theta[r] + acc);
    }
}

fn signal_plus_noise(p: usize, variances: &[f64], signal: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let m = variances.len();
    let common: Vec<f64> = (0..p).map(|_| signal * rng.sample::<f64, _>(StandardNormal) / (p as f64).sqrt()).collect();
    let mut out = DenseMatrix::zeros(p, m);
    for j in 0..m {
        let sd = (variances[j] / p as f64).sqrt();
        for r in 0..p {
            out.set(r, j, common[r] + sd * rng.sample::<f64, _>(StandardNormal));
        }
    }
    out
}

#[test]
fn robust_hdp_recovers_planted_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma2 = [1.0, 1.0, 2.0];
    let m = signal_plus_noise(5000, &sigma2, 0.5, &mut rng);
    let (w, diag) = robust_hdp_weights(&m, &RobustHdpConfig::default()).unwrap();
    let oracle = oracle_weights(&sigma2).unwrap();
    assert!(w.linf_distance(&oracle) <= 0.03, "{:?} vs {:?}", w, oracle);
    assert!(!diag.degenerate);
}

#[test]
fn robust_hdp_falls_back_to_uniform_without_noise() {
    let col = [1.0, -2.0, 0.5, 3.0, 0.25, -1.0];
    let m = DenseMatrix::from_columns(&[&col, &col, &col, &col]).unwrap();
    let (w, diag) = robust_hdp_weights(&m, &RobustHdpConfig::default()).unwrap();
    assert!(diag.degenerate, "{:?}", diag);
    assert_eq!(w.as_slice(), &[0.25; 4]);
    let (w, diag) = robust_hdp_weights(&DenseMatrix::zeros(6, 3), &RobustHdpConfig::default()).unwrap();
    assert!(diag.degenerate);
    assert!(close(w.as_slice(), &[1.0 / 3.0; 3], 1e-15));
}

#[test]
fn robust_hdp_floors_tiny_estimates() {
    let s = DenseMatrix::from_columns(&[&[5.0, 0.0, 0.0, 0.0], &[0.0; 4]]).unwrap();
    let (w, _) = robust_hdp_weights(&s, &RobustHdpConfig::default()).unwrap();
    assert!(w.as_slice().iter().all(|x| x.is_finite() && *x >= 0.0));
    assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn participants() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert_eq!(sample_participants(7, 1.0, &mut rng).unwrap(), (0..7).collect::<Vec<_>>());
    let half = sample_participants(20, 0.5, &mut rng).unwrap();
    assert_eq!(half.len(), 10);
    assert!(half.windows(2).all(|w| w[0] < w[1]));
    let a = sample_participants(20, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = sample_participants(20, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    assert!(sample_participants(20, 0.0, &mut rng).is_err());
    assert!(sample_participants(20, 1.5, &mut rng).is_err());
}

#[test]
fn step_size_thresholds() {
    // E = [10, 10]: local 1/(6·2·10) = 1/120; global 1/(12·2·√(21·20000)).
    let c = step_size_check(0.005, 2.0, &[10, 10]).unwrap();
    assert!((c.local_limit - 1.0 / 120.0).abs() < 1e-15);
    assert!((c.global_limit - 1.0 / (24.0 * 420_000f64.sqrt())).abs() < 1e-15);
    assert!(c.local_ok && !c.global_ok);

    // A single client with one step: 1/6 and 1/(12·√2).
    let c = step_size_check(0.05, 1.0, &[1]).unwrap();
    assert!((c.global_limit - 1.0 / (12.0 * 2f64.sqrt())).abs() < 1e-15);
    assert!(c.local_ok && c.global_ok);

    // Heterogeneous steps: the largest E_i binds the local limit.
    let c = step_size_check(0.02, 1.0, &[2, 5, 10]).unwrap();
    assert!((c.local_limit - 1.0 / 60.0).abs() < 1e-15);
    assert!(!c.local_ok && !c.global_ok);
    assert!(step_size_check(0.1, 0.0, &[1]).is_err());
}

fn client(id: usize, eps: f64) -> ClientSpec {
    ClientSpec::calibrated(id, 600, 32, eps, 1e-4, 1, 10).unwrap()
}

#[test]
fn minimum_epsilon_examples() {
    let clients = vec![client(0, 0.5), client(1, 1.0), client(2, 2.0)];
    let out = minimum_epsilon_transform(&clients, 10).unwrap();
    assert!(out.iter().all(|c| c.epsilon == 0.5 && c.noise_scale == clients[0].noise_scale));
    for (a, b) in out.iter().zip(&clients) {
        assert!(a.update_variance(3.0, 0.1, 1000).unwrap() >= b.update_variance(3.0, 0.1, 1000).unwrap());
        assert_eq!(a.reported_epsilon, b.reported_epsilon);
    }
    let same = vec![client(0, 1.0), client(1, 1.0)];
    assert_eq!(minimum_epsilon_transform(&same, 10).unwrap(), same);
    assert!(minimum_epsilon_transform(&[], 10).is_err());
}

fn build_synthetic_for_tests(
    n_clients: usize,
    per_client: usize,
    dim: usize,
    classes: usize,
    non_private: bool,
    rounds: usize,
    seed: u64,
) -> (ModelSpec, Population) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_synthetic(n_clients * per_client, dim, classes, 4.0, &mut rng).unwrap();
    let split = SplitSpec { method: SplitMethod::Iid, n_clients };
    let spec = PopulationSpec {
        epsilons: (0..n_clients).map(|i| 0.5 + 0.5 * i as f64).collect(),
        reported_epsilons: vec![],
        batch_sizes: (0..n_clients).map(|i| [16, 32, 64][i % 3]).collect(),
        local_epochs: vec![1; n_clients],
        delta: 1e-4,
        rounds,
        test_fraction: 0.2,
        non_private,
    };
    let pop = build_population(&data, &split, &spec, &mut rng).unwrap();
    (ModelSpec::LinearSoftmax { inputs: dim, classes }, pop)
}

fn small_experiment(strategy: StrategyKind, rounds: usize, non_private: bool, seed: u64) -> ExperimentSpec {
    let (model, pop) = build_synthetic_for_tests(6, 400, 4, 3, non_private, rounds, seed);
    ExperimentSpec {
        model,
        clients: pop.clients,
        train: pop.train,
        test: pop.test,
        rounds,
        fraction: 1.0,
        strategy,
        clip: 3.0,
        step_size: 0.05,
        robust: RobustHdpConfig::default(),
        seed,
    }
}

#[test]
fn zero_rounds_leave_model_untouched() {
    let spec = small_experiment(StrategyKind::RobustHdp, 0, false, 1);
    let out = run_experiment(&spec, &Sequential).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.theta, spec.initial_params());
}

#[test]
fn noiseless_fedavg_decreases_train_loss() {
    let spec = small_experiment(StrategyKind::DpFedAvg, 50, true, 2);
    assert!(spec.clients.iter().all(|c| c.noise_scale == 0.0));
    let out = run_experiment(&spec, &Sequential).unwrap();
    for pair in out.records.windows(2) {
        assert!(pair[1].train_loss < pair[0].train_loss, "{} -> {}", pair[0].train_loss, pair[1].train_loss);
    }
}

#[test]
fn experiments_are_deterministic() {
    let spec = small_experiment(StrategyKind::RobustHdp, 3, false, 3);
    let a = run_experiment(&spec, &Sequential).unwrap();
    let b = run_experiment(&spec, &Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn falsified_epsilon_only_moves_weiavg() {
    let honest = small_experiment(StrategyKind::RobustHdp, 3, false, 4);
    let mut liar = honest.clone();
    liar.clients[2].reported_epsilon *= 100.0;
    let a = run_experiment(&honest, &Sequential).unwrap();
    let b = run_experiment(&liar, &Sequential).unwrap();
    assert_eq!(a.theta, b.theta);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.weights, y.weights);
        assert_eq!(x.sigma2_hat, y.sigma2_hat);
        assert!(y.weiavg_weights[2] > x.weiavg_weights[2]);
    }
    let mut wa = honest.clone();
    wa.strategy = StrategyKind::WeiAvg;
    let mut wb = liar.clone();
    wb.strategy = StrategyKind::WeiAvg;
    assert_ne!(
        run_experiment(&wa, &Sequential).unwrap().theta,
        run_experiment(&wb, &Sequential).unwrap().theta
    );
}

#[test]
fn ledger_tracks_accountant() {
    let spec = small_experiment(StrategyKind::Oracle, 4, false, 5);
    let out = run_experiment(&spec, &Sequential).unwrap();
    for c in &out.clients {
        for entry in out.ledger.history(c.id) {
            let want = epsilon_spent(c.sampling_ratio(), c.noise_scale, entry.round * c.steps_per_round(), c.delta).unwrap();
            assert_eq!(entry.epsilon, want);
        }
        // After the last round the spent ε is the calibrated total.
        assert!(out.ledger.spent(c.id) <= c.epsilon);
    }
    let sys = system_privacy(&out.ledger).unwrap();
    let max = out.clients.iter().map(|c| out.ledger.spent(c.id)).fold(0.0, f64::max);
    assert_eq!(sys.epsilon, max);
    assert_eq!(sys.delta, 1e-4);
}

#[test]
fn minimum_epsilon_run_uses_transformed_clients() {
    let spec = small_experiment(StrategyKind::MinimumEpsilon, 1, false, 6);
    let out = run_experiment(&spec, &Sequential).unwrap();
    let min = spec.clients.iter().map(|c| c.epsilon).fold(f64::INFINITY, f64::min);
    assert!(out.clients.iter().all(|c| c.epsilon == min));
    assert_eq!(out.records[0].weights, out.records[0].dpfedavg_weights);
}

#[test]
fn population_reports_infeasible_clients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = crate::models_data::generate_synthetic(200, 2, 2, 3.0, &mut rng).unwrap();
    let split = crate::models_data::SplitSpec {
        method: crate::models_data::SplitMethod::Iid,
        n_clients: 2,
    };
    let spec = PopulationSpec {
        epsilons: vec![1.0, 1e-9],
        reported_epsilons: vec![],
        batch_sizes: vec![16, 16],
        local_epochs: vec![1, 1],
        delta: 1e-4,
        rounds: 5,
        test_fraction: 0.2,
        non_private: false,
    };
    assert_eq!(
        build_population(&data, &split, &spec, &mut rng),
        Err(Error::ClientsInfeasible(vec![1]))
    );
}
