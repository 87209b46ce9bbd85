//! Privacy accounting for client-side DPSGD.
//!
//! Spent privacy is bounded with the classical moments bound for the
//! subsampled Gaussian mechanism. For an order `λ` the log moment of one
//! step is at most `q² λ (λ + 1) / ((1 - q) z²)`, moments add up over
//! steps, and the tail bound gives
//!
//! ```text
//! ε(λ) = (steps · q² λ (λ + 1) / ((1 - q) z²) + ln(1/δ)) / λ
//! ```
//!
//! minimised over all integer orders `λ ≥ 1`. `ε(λ)` is convex in `λ`, so
//! the minimiser is one of the two integers around `sqrt(ln(1/δ) / a)`
//! where `a` is the per-order coefficient. Batches are accounted as if Poisson
//! sampled at rate `q`. The bound is conservative; it is not meant to agree
//! numerically with tighter production accountants.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::{Error, Result};

pub const Z_MIN: f64 = 0.3;
pub const Z_MAX: f64 = 1000.0;
const BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyTarget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyTarget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let t = PrivacyTarget { epsilon, delta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(invalid("epsilon", format!("{} is not positive", self.epsilon)));
        }
        check_delta(self.delta)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid("delta", format!("{delta} is not in (0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingInputs {
    /// Sampling ratio `b / N`.
    pub q: f64,
    /// Noisy steps per round, `K * ceil(N / b)`.
    pub steps_per_round: u64,
    pub total_rounds: u64,
}

impl AccountingInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(invalid("q", format!("{} is not in (0, 1]", self.q)));
        }
        if self.steps_per_round == 0 {
            return Err(invalid("steps_per_round", "must be at least 1"));
        }
        if self.total_rounds == 0 {
            return Err(invalid("total_rounds", "must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_round * self.total_rounds
    }
}

/// Upper bound on the ε spent after `steps` noisy steps at noise scale `z`.
///
/// With `q = 1` there is no subsampling and the Gaussian composition bound
/// `(steps λ (λ + 1) / (2 z²) + ln(1/δ)) / λ` is used instead.
pub fn epsilon_spent(q: f64, z: f64, steps: u64, delta: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid("q", format!("{q} is not in (0, 1]")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(invalid("z", format!("{z} is not positive")));
    }
    if steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    check_delta(delta)?;

    let per_order = if q < 1.0 {
        steps as f64 * q * q / ((1.0 - q) * z * z)
    } else {
        steps as f64 / (2.0 * z * z)
    };
    let log_inv_delta = (1.0 / delta).ln();
    let at = |l: f64| (per_order * l * (l + 1.0) + log_inv_delta) / l;
    let lo = (log_inv_delta / per_order).sqrt().floor().max(1.0);
    Ok(at(lo).min(at(lo + 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub z: f64,
    /// ε actually spent over all rounds at `z`.
    pub achieved_epsilon: f64,
    /// Set when the target was met at the lower end of the search bracket.
    pub floor_clamped: bool,
}

/// Smallest `z` in `[Z_MIN, Z_MAX]` whose spent ε over all rounds stays
/// within the target, found by bisection.
pub fn calibrate_noise_scale(target: PrivacyTarget, inputs: AccountingInputs) -> Result<Calibration> {
    target.validate()?;
    inputs.validate()?;
    let steps = inputs.total_steps();
    let spent = |z: f64| epsilon_spent(inputs.q, z, steps, target.delta);

    let at_min = spent(Z_MIN)?;
    if at_min <= target.epsilon {
        return Ok(Calibration {
            z: Z_MIN,
            achieved_epsilon: at_min,
            floor_clamped: true,
        });
    }
    let at_max = spent(Z_MAX)?;
    if at_max > target.epsilon {
        return Err(Error::CalibrationInfeasible {
            epsilon: target.epsilon,
            delta: target.delta,
            q: inputs.q,
            steps,
            z_max: Z_MAX,
        });
    }
    let (mut lo, mut hi) = (Z_MIN, Z_MAX);
    let mut achieved = at_max;
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let eps = spent(mid)?;
        if eps <= target.epsilon {
            hi = mid;
            achieved = eps;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration {
        z: hi,
        achieved_epsilon: achieved,
        floor_clamped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u64,
    pub epsilon: f64,
}

/// Privacy spent by each client, round by round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountantLedger {
    entries: BTreeMap<usize, Vec<LedgerEntry>>,
    deltas: BTreeMap<usize, f64>,
}

impl AccountantLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, client: usize, delta: f64) -> Result<()> {
        check_delta(delta)?;
        self.deltas.insert(client, delta);
        self.entries.entry(client).or_default();
        Ok(())
    }

    /// Appends the cumulative ε of `client` after `round`. Rounds must
    /// increase and ε must not decrease.
    pub fn record(&mut self, client: usize, round: u64, epsilon: f64) -> Result<()> {
        if !self.deltas.contains_key(&client) {
            return Err(Error::Ledger(format!("client {client} is not registered")));
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::Ledger(format!("invalid epsilon {epsilon}")));
        }
        let list = self.entries.entry(client).or_default();
        if let Some(last) = list.last() {
            if round <= last.round {
                return Err(Error::Ledger(format!(
                    "client {client}: round {round} after round {}",
                    last.round
                )));
            }
            if epsilon < last.epsilon {
                return Err(Error::Ledger(format!(
                    "client {client}: epsilon decreased from {} to {epsilon}",
                    last.epsilon
                )));
            }
        }
        list.push(LedgerEntry { round, epsilon });
        Ok(())
    }

    pub fn history(&self, client: usize) -> &[LedgerEntry] {
        self.entries.get(&client).map_or(&[], Vec::as_slice)
    }

    /// Latest spent ε, zero before the first recorded round.
    pub fn spent(&self, client: usize) -> f64 {
        self.history(client).last().map_or(0.0, |e| e.epsilon)
    }

    pub fn delta(&self, client: usize) -> Option<f64> {
        self.deltas.get(&client).copied()
    }

    pub fn clients(&self) -> impl Iterator<Item = usize> + '_ {
        self.deltas.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// System-level guarantee under parallel composition over disjoint client
/// datasets: the largest spent ε paired with the largest δ.
pub fn system_privacy(ledger: &AccountantLedger) -> Result<PrivacyTarget> {
    if ledger.is_empty() {
        return Err(Error::Empty("privacy ledger"));
    }
    let epsilon = ledger.clients().map(|c| ledger.spent(c)).fold(0.0, f64::max);
    let delta = ledger.deltas.values().copied().fold(0.0, f64::max);
    Ok(PrivacyTarget { epsilon, delta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_noise_spends_nothing() {
        assert!(epsilon_spent(0.01, 1e6, 1000, 1e-4).unwrap() < 1e-3);
    }

    #[test]
    fn matches_exhaustive_order_search() {
        let (q, z, steps, delta) = (0.0133f64, 1.2f64, 15000u64, 1e-4f64);
        let a = steps as f64 * q * q / ((1.0 - q) * z * z);
        let brute = (1..=256u32)
            .map(|o| {
                let l = f64::from(o);
                (a * l * (l + 1.0) + (1.0 / delta).ln()) / l
            })
            .fold(f64::INFINITY, f64::min);
        assert!((epsilon_spent(q, z, steps, delta).unwrap() - brute).abs() <= 1e-9);
    }

    #[test]
    fn strictly_monotone_on_grid() {
        for steps in [100, 1000, 10_000] {
            let eps: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
                .iter()
                .map(|&z| epsilon_spent(0.02, z, steps, 1e-4).unwrap())
                .collect();
            assert!(eps.windows(2).all(|w| w[1] < w[0]));
        }
        for z in [0.5, 1.0, 2.0, 4.0] {
            let eps: Vec<f64> = [100, 1000, 10_000]
                .iter()
                .map(|&t| epsilon_spent(0.02, z, t, 1e-4).unwrap())
                .collect();
            assert!(eps.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn more_steps_spend_more() {
        let a = epsilon_spent(0.02, 1.5, 500, 1e-4).unwrap();
        let b = epsilon_spent(0.02, 1.5, 1000, 1e-4).unwrap();
        assert!(b > a);
    }

    #[test]
    fn full_batch_uses_unsubsampled_bound() {
        let steps = 10;
        let z: f64 = 4.0;
        let by_hand = (1..=10_000u32)
            .map(|o| {
                let l = f64::from(o);
                (steps as f64 * l * (l + 1.0) / (2.0 * z * z) + (1e4f64).ln()) / l
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(epsilon_spent(1.0, z, steps, 1e-4).unwrap(), by_hand);
    }

    #[test]
    fn epsilon_spent_rejects_invalid_inputs() {
        assert!(epsilon_spent(0.0, 1.0, 10, 1e-4).is_err());
        assert!(epsilon_spent(1.5, 1.0, 10, 1e-4).is_err());
        assert!(epsilon_spent(0.1, 0.0, 10, 1e-4).is_err());
        assert!(epsilon_spent(0.1, 1.0, 0, 1e-4).is_err());
        assert!(epsilon_spent(0.1, 1.0, 10, 1.0).is_err());
    }

    fn inputs(q: f64, steps: u64) -> AccountingInputs {
        AccountingInputs {
            q,
            steps_per_round: steps,
            total_rounds: 1,
        }
    }

    #[test]
    fn doubling_epsilon_lowers_z() {
        let i = inputs(0.0133, 15000);
        let z1 = calibrate_noise_scale(PrivacyTarget::new(1.0, 1e-4).unwrap(), i).unwrap();
        let z2 = calibrate_noise_scale(PrivacyTarget::new(2.0, 1e-4).unwrap(), i).unwrap();
        assert!(z2.z < z1.z);
    }

    // One local epoch per round: doubling q halves the steps per round.
    #[test]
    fn z_grows_sublinearly_in_q() {
        let t = PrivacyTarget::new(1.0, 1e-4).unwrap();
        let per_epoch = |q: f64| AccountingInputs {
            q,
            steps_per_round: (1.0 / q).ceil() as u64,
            total_rounds: 100,
        };
        let z1 = calibrate_noise_scale(t, per_epoch(0.01)).unwrap().z;
        let z2 = calibrate_noise_scale(t, per_epoch(0.02)).unwrap().z;
        assert!(z2 > z1 && z2 / z1 < 2.0, "{z1} {z2}");
    }

    // At a fixed total step count the bound depends on q only through
    // q / (z sqrt(1 - q)), so z scales like q / sqrt(1 - q).
    #[test]
    fn z_scales_with_q_at_fixed_steps() {
        let t = PrivacyTarget::new(1.0, 1e-4).unwrap();
        let z1 = calibrate_noise_scale(t, inputs(0.01, 10_000)).unwrap().z;
        let z2 = calibrate_noise_scale(t, inputs(0.02, 10_000)).unwrap().z;
        let expected = 2.0 * (0.99f64 / 0.98).sqrt();
        assert!((z2 / z1 - expected).abs() < 1e-9, "{}", z2 / z1);
    }

    #[test]
    fn calibration_round_trips() {
        let t = PrivacyTarget::new(1.0, 1e-4).unwrap();
        let i = inputs(0.0133, 15000);
        let cal = calibrate_noise_scale(t, i).unwrap();
        let eps = epsilon_spent(i.q, cal.z, i.total_steps(), t.delta).unwrap();
        assert_eq!(eps, cal.achieved_epsilon);
        assert!(eps <= 1.0 && eps >= 1.0 - 1e-6, "{eps}");
        assert!(!cal.floor_clamped);
    }

    #[test]
    fn calibration_bracket_edges() {
        let lax = PrivacyTarget::new(1e4, 1e-4).unwrap();
        let cal = calibrate_noise_scale(lax, inputs(0.01, 10)).unwrap();
        assert!(cal.floor_clamped);
        assert_eq!(cal.z, Z_MIN);

        let strict = PrivacyTarget::new(1e-5, 1e-4).unwrap();
        assert!(matches!(
            calibrate_noise_scale(strict, inputs(0.01, 10)),
            Err(Error::CalibrationInfeasible { .. })
        ));
    }

    #[test]
    fn system_privacy_is_componentwise_max() {
        let mut ledger = AccountantLedger::new();
        for (c, eps) in [0.5, 2.0, 1.1].into_iter().enumerate() {
            ledger.register(c, 1e-4).unwrap();
            ledger.record(c, 1, eps).unwrap();
        }
        assert_eq!(
            system_privacy(&ledger).unwrap(),
            PrivacyTarget {
                epsilon: 2.0,
                delta: 1e-4
            }
        );

        let mut single = AccountantLedger::new();
        single.register(4, 1e-5).unwrap();
        single.record(4, 3, 0.7).unwrap();
        assert_eq!(
            system_privacy(&single).unwrap(),
            PrivacyTarget {
                epsilon: 0.7,
                delta: 1e-5
            }
        );
        assert_eq!(system_privacy(&AccountantLedger::new()), Err(Error::Empty("privacy ledger")));
    }

    #[test]
    fn ledger_rejects_decreasing_epsilon() {
        let mut ledger = AccountantLedger::new();
        ledger.register(0, 1e-4).unwrap();
        ledger.record(0, 1, 0.5).unwrap();
        ledger.record(0, 2, 0.8).unwrap();
        assert!(ledger.record(0, 3, 0.7).is_err());
        assert!(ledger.record(0, 2, 0.9).is_err());
        assert!(ledger.record(1, 1, 0.1).is_err());
        assert_eq!(ledger.history(0).len(), 2);
        assert_eq!(ledger.spent(0), 0.8);
    }
}
