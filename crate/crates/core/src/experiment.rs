//! Ensemble experiments: RMS error of the estimators over a grid of record
//! durations and measurement times.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::{estimate_in_band, InitialState, Likelihood};
use crate::model::{MeasurementModel, ParaState, PureState};
use crate::profile::OmegaProfile;
use crate::rng::stream_rng;
use crate::simulate::simulate_with_rng;
use crate::spectral::{default_half_width, fft_estimate, PeakOptions};

/// `sqrt(sum (f_i - f_true)^2 / N_E)`.
pub fn rms_error(estimates: &[f64], f_true: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    let ss: f64 = estimates.iter().map(|f| (f - f_true).powi(2)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Mle,
    Fft,
    Both,
}

impl EstimatorChoice {
    fn mle(self) -> bool {
        self != EstimatorChoice::Fft
    }

    fn fft(self) -> bool {
        self != EstimatorChoice::Mle
    }
}

fn default_f() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    0.01
}

fn default_eta() -> f64 {
    1.0
}

fn default_estimator() -> EstimatorChoice {
    EstimatorChoice::Both
}

/// Sweep definition; every physical key carries its unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub t_us: Vec<f64>,
    pub tau_m_us: Vec<f64>,
    pub n_ensemble: usize,
    #[serde(default = "default_f")]
    pub f_mhz: f64,
    #[serde(default = "default_dt")]
    pub dt_us: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub t1_us: Option<f64>,
    #[serde(default)]
    pub t2_us: Option<f64>,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorChoice,
    #[serde(default)]
    pub master_seed: u64,
    /// Search band for both estimators; `[0, 2 f]` when absent.
    #[serde(default)]
    pub band_mhz: Option<(f64, f64)>,
}

impl SweepConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_us.is_empty() || self.tau_m_us.is_empty() {
            return Err(Error::Config("t_us and tau_m_us must be nonempty".into()));
        }
        if self.n_ensemble == 0 {
            return Err(Error::Config("n_ensemble must be at least 1".into()));
        }
        if self.t_us.iter().any(|t| !(*t >= 2.0 * self.dt_us)) {
            return Err(Error::Config("every T must span at least two bins".into()));
        }
        if let Some((lo, hi)) = self.band_mhz {
            if !(hi > lo) {
                return Err(Error::Config(format!("empty band [{lo}, {hi}]")));
            }
        }
        for &tau in &self.tau_m_us {
            self.model(tau)?;
        }
        Ok(())
    }

    pub fn model(&self, tau_m_us: f64) -> Result<MeasurementModel> {
        MeasurementModel::new(
            tau_m_us,
            self.dt_us,
            self.eta,
            self.t1_us.unwrap_or(f64::INFINITY),
            self.t2_us.unwrap_or(f64::INFINITY),
        )
    }

    pub fn band(&self) -> (f64, f64) {
        self.band_mhz.unwrap_or((0.0, 2.0 * self.f_mhz))
    }

    pub fn n_cells(&self) -> usize {
        self.t_us.len() * self.tau_m_us.len()
    }
}

/// Outcome of one `(T, tau_m)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub t_us: f64,
    pub tau_m_us: f64,
    pub n_ensemble: usize,
    pub rms_mle_mhz: Option<f64>,
    pub rms_fft_mhz: Option<f64>,
    pub median_sigma_mhz: Option<f64>,
    /// MLE fits that were non-concave or pinned to the band edge; still counted in the RMS.
    pub mle_unconverged: usize,
    pub mle_failures: usize,
    pub fft_failures: usize,
    pub mle_estimates: Vec<f64>,
    pub fft_estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    /// Row-major over `t_us`, then `tau_m_us`.
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn cell(&self, t_us: f64, tau_m_us: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.t_us == t_us && c.tau_m_us == tau_m_us)
    }

    /// CSV with `#` metadata lines and one row per cell.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::new();
        out.push_str(&format!("# f_mhz={}\n# dt_us={}\n# eta={}\n", c.f_mhz, c.dt_us, c.eta));
        out.push_str(&format!("# t1_us={}\n# t2_us={}\n", opt(c.t1_us), opt(c.t2_us)));
        let band = c.band();
        out.push_str(&format!("# band_mhz={},{}\n", band.0, band.1));
        out.push_str(&format!("# n_ensemble={}\n# master_seed={}\n", c.n_ensemble, c.master_seed));
        out.push_str("t_us,tau_m_us,n_ensemble,rms_mle_mhz,rms_fft_mhz,median_sigma_mhz,mle_unconverged,mle_failures,fft_failures\n");
        for cell in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                cell.t_us,
                cell.tau_m_us,
                cell.n_ensemble,
                opt(cell.rms_mle_mhz),
                opt(cell.rms_fft_mhz),
                opt(cell.median_sigma_mhz),
                cell.mle_unconverged,
                cell.mle_failures,
                cell.fft_failures
            ));
        }
        out
    }
}

struct MemberOutcome {
    mle: Option<Result<(f64, f64, bool)>>,
    fft: Option<Result<f64>>,
}

fn run_member(cfg: &SweepConfig, cell: usize, member: usize) -> Result<MemberOutcome> {
    let t_us = cfg.t_us[cell / cfg.tau_m_us.len()];
    let tau_m = cfg.tau_m_us[cell % cfg.tau_m_us.len()];
    let model = cfg.model(tau_m)?;
    let n_steps = (t_us / cfg.dt_us).round() as usize;
    let mut rng = stream_rng(cfg.master_seed, &[cell as u64, member as u64]);
    let sim = simulate_with_rng(&OmegaProfile::constant(cfg.f_mhz), &model, n_steps, ParaState::GROUND, &mut rng)?;
    let samples = sim.record.samples();
    let band = cfg.band();

    let mle = cfg.estimator.mle().then(|| {
        let lik = Likelihood::new(samples, &model, InitialState::Pure(PureState::GROUND))?;
        let est = estimate_in_band(&lik, band, None)?;
        Ok((est.f_ml_mhz, est.sigma_mhz, est.is_reliable()))
    });
    let fft = cfg.estimator.fft().then(|| {
        let peak = PeakOptions { band: Some(band), ..PeakOptions::default() };
        fft_estimate(samples, cfg.dt_us, default_half_width(t_us, tau_m), &peak)
    });
    Ok(MemberOutcome { mle, fft })
}

/// Simulate `n_ensemble` records per cell and collect estimator RMS errors.
/// Every member draws from its own `(master_seed, cell, member)` stream, so
/// the result does not depend on scheduling or thread count.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let n_e = cfg.n_ensemble;
    let outcomes = (0..cfg.n_cells() * n_e)
        .into_par_iter()
        .map(|i| run_member(cfg, i / n_e, i % n_e))
        .collect::<Result<Vec<_>>>()?;

    let cells = outcomes
        .chunks(n_e)
        .enumerate()
        .map(|(cell, members)| {
            let t_us = cfg.t_us[cell / cfg.tau_m_us.len()];
            let tau_m_us = cfg.tau_m_us[cell % cfg.tau_m_us.len()];
            let (mut mle_estimates, mut sigmas, mut fft_estimates) = (Vec::new(), Vec::new(), Vec::new());
            let (mut mle_unconverged, mut mle_failures, mut fft_failures) = (0, 0, 0);
            for m in members {
                match &m.mle {
                    Some(Ok((f, s, reliable))) => {
                        mle_estimates.push(*f);
                        if s.is_finite() {
                            sigmas.push(*s);
                        }
                        mle_unconverged += usize::from(!reliable);
                    }
                    Some(Err(e)) => {
                        log::warn!("cell {cell}: MLE failed: {e}");
                        mle_failures += 1;
                    }
                    None => {}
                }
                match &m.fft {
                    Some(Ok(f)) => fft_estimates.push(*f),
                    Some(Err(e)) => {
                        log::warn!("cell {cell}: FFT failed: {e}");
                        fft_failures += 1;
                    }
                    None => {}
                }
            }
            sigmas.sort_by(f64::total_cmp);
            CellResult {
                t_us,
                tau_m_us,
                n_ensemble: n_e,
                rms_mle_mhz: rms_error(&mle_estimates, cfg.f_mhz).ok(),
                rms_fft_mhz: rms_error(&fft_estimates, cfg.f_mhz).ok(),
                median_sigma_mhz: (!sigmas.is_empty()).then(|| sigmas[sigmas.len() / 2]),
                mle_unconverged,
                mle_failures,
                fft_failures,
                mle_estimates,
                fft_estimates,
            }
        })
        .collect();
    Ok(SweepResult { config: cfg.clone(), cells })
}
