//! Drive-frequency profiles `f(t)` for simulation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::mhz_to_omega;
use crate::rng::seeded_rng;

/// Rabi frequency as a function of time, in MHz over microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaProfile {
    Constant(f64),
    /// Waypoints `[t_us, f_mhz]`, linearly interpolated; times strictly increasing.
    PiecewiseLinear(Vec<[f64; 2]>),
}

impl OmegaProfile {
    pub fn constant(f_mhz: f64) -> Self {
        OmegaProfile::Constant(f_mhz)
    }

    pub fn piecewise(waypoints: Vec<[f64; 2]>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Empty("profile waypoints"));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("waypoints", "non-finite entry"));
        }
        if waypoints.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::invalid("waypoints", "times must be strictly increasing"));
        }
        Ok(OmegaProfile::PiecewiseLinear(waypoints))
    }

    /// Time span on which the profile is defined.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            OmegaProfile::Constant(_) => (f64::NEG_INFINITY, f64::INFINITY),
            OmegaProfile::PiecewiseLinear(w) => (w[0][0], w[w.len() - 1][0]),
        }
    }

    pub fn covers(&self, start_us: f64, end_us: f64) -> bool {
        let (lo, hi) = self.domain();
        lo <= start_us && end_us <= hi
    }

    /// Frequency in MHz at time `t_us`.
    pub fn freq_at(&self, t_us: f64) -> Result<f64> {
        match self {
            OmegaProfile::Constant(f) => Ok(*f),
            OmegaProfile::PiecewiseLinear(w) => {
                let (lo, hi) = self.domain();
                if !(lo..=hi).contains(&t_us) {
                    return Err(Error::ProfileUndefined { t_us, start_us: lo, end_us: hi });
                }
                let k = w.partition_point(|p| p[0] <= t_us).clamp(1, w.len().max(2) - 1);
                if w.len() == 1 {
                    return Ok(w[0][1]);
                }
                let ([t0, f0], [t1, f1]) = (w[k - 1], w[k]);
                Ok(f0 + (f1 - f0) * (t_us - t0) / (t1 - t0))
            }
        }
    }

    /// Angular frequency in rad/us at time `t_us`.
    pub fn omega_at(&self, t_us: f64) -> Result<f64> {
        self.freq_at(t_us).map(mhz_to_omega)
    }

    /// Mean frequency over `[start_us, end_us]` by trapezoid rule on a fine grid.
    pub fn mean_freq(&self, start_us: f64, end_us: f64) -> Result<f64> {
        const STEPS: usize = 256;
        let h = (end_us - start_us) / STEPS as f64;
        let mut acc = 0.0;
        for i in 0..=STEPS {
            let w = if i == 0 || i == STEPS { 0.5 } else { 1.0 };
            acc += w * self.freq_at(start_us + i as f64 * h)?;
        }
        Ok(acc / STEPS as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        match serde_json::from_str(s)? {
            OmegaProfile::PiecewiseLinear(w) => Self::piecewise(w),
            c => Ok(c),
        }
    }
}

/// Random slow drift around `f0_mhz`: waypoints spaced uniformly in
/// `[min_timescale, 2 min_timescale]`, values uniform in
/// `f0 [1 - fraction/2, 1 + fraction/2]`, covering `[0, horizon]`.
pub fn make_drift_profile(
    f0_mhz: f64,
    fraction: f64,
    min_timescale_us: f64,
    horizon_us: f64,
    seed: u64,
) -> Result<OmegaProfile> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid("fraction", format!("must lie in [0, 1), got {fraction}")));
    }
    if !(min_timescale_us > 0.0) {
        return Err(Error::invalid("min_timescale", "must be positive"));
    }
    if horizon_us < min_timescale_us {
        return Err(Error::invalid(
            "horizon",
            format!("{horizon_us} us is shorter than the minimum drift timescale {min_timescale_us} us"),
        ));
    }
    if fraction == 0.0 {
        return Ok(OmegaProfile::Constant(f0_mhz));
    }
    let mut rng = seeded_rng(seed);
    let (lo, hi) = (f0_mhz * (1.0 - fraction / 2.0), f0_mhz * (1.0 + fraction / 2.0));
    let mut t = 0.0;
    let mut waypoints = vec![[t, rng.random_range(lo..=hi)]];
    while t < horizon_us {
        t += rng.random_range(min_timescale_us..=2.0 * min_timescale_us);
        waypoints.push([t, rng.random_range(lo..=hi)]);
    }
    OmegaProfile::piecewise(waypoints)
}
