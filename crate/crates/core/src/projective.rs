//! Periodic projective measurement: the exactly solvable comparison case.
//!
//! A qubit driven at `omega` and measured projectively every `tau` repeats
//! its previous outcome with probability `cos^2(omega tau / 2)`. Only the
//! number of switches `n` among `N` outcomes matters, and it is binomial.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveRecord {
    pub bits: Vec<bool>,
    /// Period between measurements in microseconds.
    pub tau_us: f64,
    /// Known outcome preceding the first recorded measurement.
    pub initial_bit: bool,
}

impl ProjectiveRecord {
    pub fn new(bits: Vec<bool>, tau_us: f64, initial_bit: bool) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Empty("projective record"));
        }
        if !(tau_us > 0.0) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        Ok(Self { bits, tau_us, initial_bit })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Swap the labels 0 and 1 everywhere.
    pub fn relabeled(&self) -> Self {
        Self { bits: self.bits.iter().map(|b| !b).collect(), tau_us: self.tau_us, initial_bit: !self.initial_bit }
    }
}

/// Probability that consecutive outcomes differ, `sin^2(omega tau / 2)`.
pub fn switch_probability(omega: f64, tau_us: f64) -> f64 {
    (0.5 * omega * tau_us).sin().powi(2)
}

/// Markov-chain simulation of `n_meas` outcomes; `omega` in rad/us.
pub fn simulate_projective(
    omega: f64,
    tau_us: f64,
    n_meas: usize,
    initial_bit: bool,
    seed: u64,
) -> Result<ProjectiveRecord> {
    if n_meas == 0 {
        return Err(Error::invalid("n_meas", "must be at least 1"));
    }
    let p_d = switch_probability(omega, tau_us);
    let mut rng = seeded_rng(seed);
    let mut prev = initial_bit;
    let bits = (0..n_meas)
        .map(|_| {
            prev ^= rng.random::<f64>() < p_d;
            prev
        })
        .collect();
    ProjectiveRecord::new(bits, tau_us, initial_bit)
}

/// Unequal adjacent pairs, starting with `(initial_bit, bits[0])`.
pub fn count_switches(rec: &ProjectiveRecord) -> usize {
    let mut prev = rec.initial_bit;
    let mut n = 0;
    for &b in &rec.bits {
        n += usize::from(b != prev);
        prev = b;
    }
    n
}

/// `ln C(N, n) + n ln sin^2(omega tau / 2) + (N - n) ln cos^2(omega tau / 2)`, with `0 ln 0 = 0`.
pub fn projective_loglike(n: usize, n_meas: usize, omega: f64, tau_us: f64) -> Result<f64> {
    if n > n_meas {
        return Err(Error::invalid("n", format!("{n} switches exceed {n_meas} measurements")));
    }
    let p_d = switch_probability(omega, tau_us);
    let term = |count: usize, p: f64| if count == 0 { 0.0 } else { count as f64 * p.ln() };
    Ok(ln_binomial(n_meas, n) + term(n, p_d) + term(n_meas - n, 1.0 - p_d))
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveEstimate {
    pub n: usize,
    pub n_meas: usize,
    /// rad/us, in `[0, pi / tau]`.
    pub omega_ml: f64,
    /// rad/us.
    pub sigma: f64,
    /// `n = 0` or `n = N`, where the estimate has unbounded slope in `n`.
    pub at_boundary: bool,
}

/// Closed-form maximum-likelihood estimate `2 asin(sqrt(n / N)) / tau` with width `1 / (tau sqrt(N))`.
pub fn projective_mle(n: usize, n_meas: usize, tau_us: f64) -> Result<ProjectiveEstimate> {
    if n_meas == 0 || n > n_meas {
        return Err(Error::invalid("n", format!("need 0 <= n <= N with N >= 1, got n={n}, N={n_meas}")));
    }
    if !(tau_us > 0.0) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    let omega_ml = 2.0 * (n as f64 / n_meas as f64).sqrt().asin() / tau_us;
    Ok(ProjectiveEstimate {
        n,
        n_meas,
        omega_ml,
        sigma: 1.0 / (tau_us * (n_meas as f64).sqrt()),
        at_boundary: n == 0 || n == n_meas,
    })
}

/// Fisher information `N tau^2` about `omega`, independent of `omega`.
pub fn projective_fisher(n_meas: usize, tau_us: f64) -> f64 {
    n_meas as f64 * tau_us * tau_us
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn simulation_limits() {
        let still = simulate_projective(0.0, 1.0, 50, true, 1).unwrap();
        assert!(still.bits.iter().all(|&b| b));
        assert_eq!(count_switches(&still), 0);
        let flip = simulate_projective(PI, 1.0, 51, false, 1).unwrap();
        assert_eq!(count_switches(&flip), 51);
        assert!(flip.bits.windows(2).all(|w| w[0] != w[1]));
        assert!(simulate_projective(1.0, 1.0, 0, false, 1).is_err());
    }

    #[test]
    fn half_switch_rate() {
        let n_meas = 40_000;
        let rec = simulate_projective(PI / 2.0, 1.0, n_meas, false, 9).unwrap();
        let frac = count_switches(&rec) as f64 / n_meas as f64;
        assert!((frac - 0.5).abs() < 3.0 / (2.0 * (n_meas as f64).sqrt()));
    }

    #[test]
    fn switch_counting() {
        let rec = ProjectiveRecord::new(vec![false, false, true, true, false], 1.0, false).unwrap();
        assert_eq!(count_switches(&rec), 2);
        assert_eq!(count_switches(&rec.relabeled()), 2);
        let alt = ProjectiveRecord::new(vec![true, false, true, false], 1.0, false).unwrap();
        assert_eq!(count_switches(&alt), 4);
    }

    #[test]
    fn estimator_values() {
        let mid = projective_mle(50, 100, 2.0).unwrap();
        assert!((mid.omega_ml * 2.0 - PI / 2.0).abs() < 1e-12);
        assert!((mid.sigma - 0.05).abs() < 1e-15);
        assert!(!mid.at_boundary);
        let zero = projective_mle(0, 100, 1.0).unwrap();
        assert_eq!(zero.omega_ml, 0.0);
        assert!(zero.at_boundary && projective_mle(100, 100, 1.0).unwrap().at_boundary);
        assert!((projective_mle(100, 100, 1.0).unwrap().omega_ml - PI).abs() < 1e-12);
        assert!(projective_mle(5, 4, 1.0).is_err());
        assert!(projective_mle(0, 0, 1.0).is_err());
    }

    #[test]
    fn loglike_boundaries() {
        assert_eq!(projective_loglike(0, 10, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(projective_loglike(10, 10, PI, 1.0).unwrap(), 0.0);
        assert!(projective_loglike(11, 10, 1.0, 1.0).is_err());
        let mut prev = f64::INFINITY;
        for i in 1..30 {
            let l = projective_loglike(0, 20, i as f64 * 0.1, 1.0).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn fisher_values() {
        assert_eq!(projective_fisher(100, 1.0), 100.0);
        assert_eq!(projective_fisher(1, 2.0), 4.0);
    }
}
