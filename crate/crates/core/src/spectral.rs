//! Periodogram estimates of the Rabi frequency.
//!
//! The power spectral density is normalized as `|DFT|^2 dt / N`, which puts
//! the white readout-noise floor at `tau_m` and the Rabi peak about `4 tau_m`
//! above it.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::ReadoutRecord;

/// One-sided power spectrum on bins `k / T`, `k = 0..=N/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    freqs: Vec<f64>,
    power: Vec<f64>,
    df: f64,
    n_samples: usize,
    /// Half-width in bins of the triangular filter applied, if any.
    pub filter_half_width: Option<usize>,
}

impl Spectrum {
    /// Build from explicit bins spaced by `df`, starting at zero.
    pub fn from_power(power: Vec<f64>, df: f64) -> Result<Self> {
        if power.is_empty() {
            return Err(Error::Empty("spectrum"));
        }
        if !(df > 0.0) || power.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("spectrum", "need df > 0 and finite non-negative power"));
        }
        let freqs = (0..power.len()).map(|k| k as f64 * df).collect();
        let n_samples = 2 * (power.len() - 1);
        Ok(Self { freqs, power, df, n_samples, filter_half_width: None })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    /// `sum_k S_k df` over the two-sided spectrum; equals `mean(r^2)` for an unfiltered periodogram.
    pub fn total_power(&self) -> f64 {
        let last = self.power.len() - 1;
        let nyquist_single = self.n_samples % 2 == 0;
        self.power
            .iter()
            .enumerate()
            .map(|(k, p)| if k == 0 || (k == last && nyquist_single) { *p } else { 2.0 * p })
            .sum::<f64>()
            * self.df
    }

    /// CSV with columns `f_mhz,power`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("f_mhz,power\n");
        for (f, p) in self.freqs.iter().zip(&self.power) {
            out.push_str(&format!("{f},{p}\n"));
        }
        out
    }
}

/// Periodogram of a readout record.
pub fn periodogram(record: &ReadoutRecord) -> Result<Spectrum> {
    periodogram_samples(record.samples(), record.model().dt())
}

/// Periodogram of raw samples with bin width `dt_us`.
pub fn periodogram_samples(samples: &[f64], dt_us: f64) -> Result<Spectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("periodogram", format!("need at least 2 samples, got {n}")));
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&r| Complex::new(r, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = dt_us / n as f64;
    let power = buf[..=n / 2].iter().map(|c| c.norm_sqr() * scale).collect();
    let df = 1.0 / (n as f64 * dt_us);
    let freqs = (0..=n / 2).map(|k| k as f64 * df).collect();
    Ok(Spectrum { freqs, power, df, n_samples: n, filter_half_width: None })
}

/// Center-weighted moving average with weights `h + 1 - |m|` for `|m| <= h`,
/// renormalized over the bins available at the edges.
pub fn triangular_filter(spec: &Spectrum, half_width_bins: usize) -> Result<Spectrum> {
    let len = spec.power.len();
    if half_width_bins == 0 {
        return Err(Error::invalid("half_width_bins", "must be at least 1"));
    }
    if 2 * half_width_bins + 1 > len {
        return Err(Error::invalid(
            "half_width_bins",
            format!("kernel of {} bins is wider than the {len}-bin spectrum", 2 * half_width_bins + 1),
        ));
    }
    let h = half_width_bins as isize;
    let power = (0..len as isize)
        .map(|k| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for m in -h..=h {
                let j = k + m;
                if j >= 0 && (j as usize) < len {
                    let w = (h + 1 - m.abs()) as f64;
                    acc += w * spec.power[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect();
    Ok(Spectrum { power, filter_half_width: Some(half_width_bins), ..spec.clone() })
}

/// Filter half-width covering roughly half the Lorentzian peak: `max(2, round(T / (2 pi tau_m) / 2))`.
pub fn default_half_width(duration_us: f64, tau_m_us: f64) -> usize {
    let bins_in_peak = duration_us / (std::f64::consts::TAU * tau_m_us);
    ((bins_in_peak / 2.0).round() as usize).max(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOptions {
    /// Search band in MHz; the whole spectrum when absent.
    pub band: Option<(f64, f64)>,
    /// Lowest bins ignored to suppress the zero-frequency peak of a pinned qubit.
    pub exclude_dc_bins: usize,
    /// Refine the argmax bin with a 3-point parabola on log power.
    pub interpolate: bool,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self { band: None, exclude_dc_bins: 2, interpolate: true }
    }
}

/// Frequency of the largest in-band bin, optionally interpolated.
pub fn peak_estimate(spec: &Spectrum, opts: &PeakOptions) -> Result<f64> {
    let (lo, hi) = opts.band.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut best: Option<usize> = None;
    for k in opts.exclude_dc_bins..spec.len() {
        let f = spec.freqs[k];
        if f < lo || f > hi {
            continue;
        }
        if best.is_none_or(|b| spec.power[k] > spec.power[b]) {
            best = Some(k);
        }
    }
    let k = best.ok_or(Error::EmptyBand { lo, hi })?;
    if !opts.interpolate || k == 0 || k + 1 >= spec.len() {
        return Ok(spec.freqs[k]);
    }
    let (pl, pc, pr) = (spec.power[k - 1], spec.power[k], spec.power[k + 1]);
    if !(pl > 0.0 && pr > 0.0 && pc > 0.0) {
        return Ok(spec.freqs[k]);
    }
    let (l, c, r) = (pl.ln(), pc.ln(), pr.ln());
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return Ok(spec.freqs[k]);
    }
    let delta = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
    Ok(spec.freqs[k] + delta * spec.df)
}

/// Filtered-periodogram frequency estimate of a record, in MHz.
pub fn fft_estimate(samples: &[f64], dt_us: f64, half_width_bins: usize, opts: &PeakOptions) -> Result<f64> {
    let spec = periodogram_samples(samples, dt_us)?;
    let filtered = triangular_filter(&spec, half_width_bins)?;
    peak_estimate(&filtered, opts)
}

/// Reference Lorentzian: floor `tau_m` plus a peak of height `4 tau_m` and
/// full width `1 / (2 pi tau_m)` at `f0`.
pub fn lorentzian_model(f_mhz: f64, f0_mhz: f64, tau_m_us: f64) -> f64 {
    let half = 0.5 / (std::f64::consts::TAU * tau_m_us);
    let d = f_mhz - f0_mhz;
    tau_m_us + 4.0 * tau_m_us * half * half / (d * d + half * half)
}
