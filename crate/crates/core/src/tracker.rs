//! Sliding-window tracking of a drifting Rabi frequency.
//!
//! Each window is estimated by the same pipeline: a filtered-periodogram seed,
//! then a grid search and parabolic fit of the log-likelihood, optionally with
//! a Gaussian prior carried over from the previous window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::{
    refine_and_fit, EstimateResult, FrequencyGrid, GaussianPrior, InitialState, Likelihood, Posterior, RefineOptions,
};
use crate::model::{MeasurementModel, ParaState, PureState};
use crate::record::ReadoutRecord;
use crate::spectral::{default_half_width, fft_estimate, PeakOptions};

/// Where a window's grid is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    Fft,
    Previous,
    Both,
}

/// State assumed at the start of every window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStart {
    /// Mixed for nonideal models, equal superposition for the ideal model.
    Auto,
    Mixed,
    Superposition,
    Ground,
}

impl WindowStart {
    pub fn state(&self, model: &MeasurementModel) -> InitialState {
        match self {
            WindowStart::Auto if model.is_ideal() => InitialState::Pure(PureState::PLUS),
            WindowStart::Auto | WindowStart::Mixed => InitialState::Para(ParaState::MIXED),
            WindowStart::Superposition => InitialState::Pure(PureState::PLUS),
            WindowStart::Ground => InitialState::Pure(PureState::GROUND),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub window_us: f64,
    pub step_us: f64,
    pub seed_mode: SeedMode,
    /// Added to the previous window's sigma to form the next prior width (MHz).
    pub drift_allowance_mhz: f64,
    /// Band searched when nothing better is known (MHz).
    pub search_band_mhz: (f64, f64),
    /// Half-width of the periodogram band around the previous estimate (MHz).
    pub fft_halo_mhz: f64,
    /// Half-width of the likelihood grid around an FFT seed; `max(8 / T_w, 1 / (2 pi tau_m))` when absent.
    pub mle_halo_mhz: Option<f64>,
    /// Carry a prior from window to window; windows run in parallel when off.
    pub chain_prior: bool,
    pub window_start: WindowStart,
    /// Final grid resolution (MHz); `1 / (10 T_w)` when absent.
    pub resolution_mhz: Option<f64>,
    /// Periodogram filter half-width in bins; the spectral default when absent.
    pub filter_half_width: Option<usize>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_us: 40.0,
            step_us: 10.0,
            seed_mode: SeedMode::Both,
            drift_allowance_mhz: 0.05,
            search_band_mhz: (0.0, 2.0),
            fft_halo_mhz: 0.3,
            mle_halo_mhz: None,
            chain_prior: true,
            window_start: WindowStart::Auto,
            resolution_mhz: None,
            filter_half_width: None,
        }
    }
}

impl TrackerConfig {
    /// Load TOML, or JSON when the extension is `.json`. Missing keys take their defaults.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_us > 0.0) || !(self.step_us > 0.0) || self.step_us > self.window_us {
            return Err(Error::invalid(
                "tracker",
                format!("need 0 < step <= window, got step {} us, window {} us", self.step_us, self.window_us),
            ));
        }
        if !(self.drift_allowance_mhz >= 0.0) || !(self.fft_halo_mhz > 0.0) {
            return Err(Error::invalid("tracker", "drift allowance must be >= 0 and the FFT halo > 0"));
        }
        let (lo, hi) = self.search_band_mhz;
        if !(hi > lo) {
            return Err(Error::invalid("search_band_mhz", format!("empty band [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Search constraint for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowSearch {
    /// FFT seed over the search band, local grid around it.
    Static,
    /// Prior from the previous window, FFT band around its mean.
    Chained(GaussianPrior),
    /// Grid over the whole search band, no prior.
    Wide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub estimate: EstimateResult,
    pub f_fft_mhz: f64,
    /// The FFT seed shaped the likelihood grid.
    pub fft_seeded: bool,
    /// Prior curvature exceeded ten times the data curvature.
    pub prior_dominated: bool,
}

/// The single-window pipeline used by [`track`].
pub fn window_estimate(
    samples: &[f64],
    model: &MeasurementModel,
    search: WindowSearch,
    cfg: &TrackerConfig,
) -> Result<WindowEstimate> {
    let duration = samples.len() as f64 * model.dt();
    let band = cfg.search_band_mhz;
    let fft_band = match search {
        WindowSearch::Chained(p) => ((p.mean - cfg.fft_halo_mhz).max(band.0), (p.mean + cfg.fft_halo_mhz).min(band.1)),
        _ => band,
    };
    let half_width = cfg.filter_half_width.unwrap_or_else(|| default_half_width(duration, model.tau_m()));
    let peak = PeakOptions { band: Some(fft_band), ..PeakOptions::default() };
    let f_fft = fft_estimate(samples, model.dt(), half_width, &peak)?;

    let likelihood = Likelihood::new(samples, model, cfg.window_start.state(model))?;
    // A prior narrower than the data width needs a finer grid to resolve the posterior peak.
    let prior_scale = match search {
        WindowSearch::Chained(p) => p.std,
        _ => f64::INFINITY,
    };
    let spacing = (0.25 / duration).min(prior_scale / 4.0);
    let halo = cfg.mle_halo_mhz.unwrap_or((8.0 / duration).max(1.0 / (std::f64::consts::TAU * model.tau_m())));
    let (prior, lo, hi, fft_seeded) = match search {
        WindowSearch::Static => (None, f_fft - halo, f_fft + halo, true),
        WindowSearch::Wide => (None, band.0, band.1, false),
        WindowSearch::Chained(p) => {
            let reach = 3.0 * p.std;
            // A prior narrower than one periodogram bin leaves the FFT nothing to add.
            let use_fft = cfg.seed_mode != SeedMode::Previous && p.std >= 1.0 / duration;
            let use_prev = cfg.seed_mode != SeedMode::Fft || !use_fft;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            if use_prev {
                lo = lo.min(p.mean - reach);
                hi = hi.max(p.mean + reach);
            }
            if use_fft {
                lo = lo.min(f_fft - reach);
                hi = hi.max(f_fft + reach);
            }
            (Some(p), lo, hi, use_fft)
        }
    };
    let (lo, hi) = (lo.max(band.0), hi.min(band.1));
    let grid = if hi - lo > 2.0 * spacing {
        FrequencyGrid::with_spacing(lo, hi, spacing)?
    } else {
        FrequencyGrid::with_spacing(band.0, band.1, spacing)?
    };
    let refine = RefineOptions {
        target_resolution_mhz: cfg.resolution_mhz.unwrap_or(0.1 / duration).min(prior_scale / 10.0),
        ..RefineOptions::for_duration(duration)
    };
    let estimate = refine_and_fit(&Posterior { likelihood: &likelihood, prior }, &grid, &refine)?;

    let prior_dominated = match prior {
        Some(p) if estimate.converged => {
            let data_curvature = estimate.sigma_mhz.powi(-2) - p.precision();
            p.precision() > 10.0 * data_curvature
        }
        _ => false,
    };
    if prior_dominated {
        log::warn!("window estimate at {:.4} MHz is dominated by its prior", estimate.f_ml_mhz);
    }
    Ok(WindowEstimate { estimate, f_fft_mhz: f_fft, fft_seeded, prior_dominated })
}

/// One point of a drift trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t_mid_us: f64,
    pub f_ml_mhz: f64,
    pub sigma_mhz: f64,
    pub f_fft_mhz: f64,
    pub window_start_us: f64,
    pub window_end_us: f64,
    pub converged: bool,
    pub prior_dominated: bool,
}

/// Windowed estimates in time order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DriftTrace {
    pub points: Vec<TracePoint>,
}

impl DriftTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with columns `t_mid_us,f_ml_mhz,sigma_mhz,f_fft_mhz`, then the window span and flags.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t_mid_us,f_ml_mhz,sigma_mhz,f_fft_mhz,window_start_us,window_end_us,converged,prior_dominated\n",
        );
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.t_mid_us,
                p.f_ml_mhz,
                p.sigma_mhz,
                p.f_fft_mhz,
                p.window_start_us,
                p.window_end_us,
                p.converged,
                p.prior_dominated
            ));
        }
        out
    }

    /// RMS deviation of the MLE and FFT columns from `truth(t_mid)`.
    pub fn rms_deviation<F: Fn(f64) -> Result<f64>>(&self, truth: F) -> Result<(f64, f64)> {
        if self.points.is_empty() {
            return Err(Error::Empty("drift trace"));
        }
        let (mut ml, mut fft) = (0.0, 0.0);
        for p in &self.points {
            let f = truth(p.t_mid_us)?;
            ml += (p.f_ml_mhz - f).powi(2);
            fft += (p.f_fft_mhz - f).powi(2);
        }
        let n = self.points.len() as f64;
        Ok(((ml / n).sqrt(), (fft / n).sqrt()))
    }
}

fn bins(span_us: f64, dt: f64, name: &'static str) -> Result<usize> {
    let n = (span_us / dt).round();
    if n < 1.0 || (n * dt - span_us).abs() > 1e-9 * span_us.max(1.0) {
        return Err(Error::invalid(name, format!("{span_us} us is not a whole number of {dt} us bins")));
    }
    Ok(n as usize)
}

/// Estimate the frequency over every window `[k step, k step + T_w]` inside the record.
pub fn track(record: &ReadoutRecord, cfg: &TrackerConfig) -> Result<DriftTrace> {
    cfg.validate()?;
    let model = record.model();
    let dt = model.dt();
    let win = bins(cfg.window_us, dt, "window_us")?;
    let step = bins(cfg.step_us, dt, "step_us")?;
    if record.len() < win {
        return Err(Error::invalid(
            "window_us",
            format!("record lasts {} us, shorter than the {} us window", record.duration(), cfg.window_us),
        ));
    }
    let n_windows = (record.len() - win) / step + 1;
    let samples = record.samples();
    let point = |k: usize, w: &WindowEstimate| {
        let start = k as f64 * cfg.step_us;
        TracePoint {
            t_mid_us: start + cfg.window_us / 2.0,
            f_ml_mhz: w.estimate.f_ml_mhz,
            sigma_mhz: w.estimate.sigma_mhz,
            f_fft_mhz: w.f_fft_mhz,
            window_start_us: start,
            window_end_us: start + cfg.window_us,
            converged: w.estimate.is_reliable(),
            prior_dominated: w.prior_dominated,
        }
    };

    let points = if cfg.chain_prior {
        let mut points = Vec::with_capacity(n_windows);
        let band_width = cfg.search_band_mhz.1 - cfg.search_band_mhz.0;
        let mut search = WindowSearch::Static;
        for k in 0..n_windows {
            let w = window_estimate(&samples[k * step..k * step + win], &model, search, cfg)?;
            search = if w.estimate.is_reliable() {
                WindowSearch::Chained(GaussianPrior::new(
                    w.estimate.f_ml_mhz,
                    w.estimate.sigma_mhz + cfg.drift_allowance_mhz,
                )?)
            } else {
                log::info!("window {k} did not converge; widening the search");
                match search {
                    WindowSearch::Chained(p) if 2.0 * p.std + cfg.drift_allowance_mhz < band_width / 6.0 => {
                        WindowSearch::Chained(GaussianPrior::new(p.mean, 2.0 * p.std + cfg.drift_allowance_mhz)?)
                    }
                    _ => WindowSearch::Wide,
                }
            };
            points.push(point(k, &w));
        }
        points
    } else {
        (0..n_windows)
            .into_par_iter()
            .map(|k| {
                window_estimate(&samples[k * step..k * step + win], &model, WindowSearch::Static, cfg)
                    .map(|w| point(k, &w))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(DriftTrace { points })
}
