//! Maximum-likelihood estimation of the Rabi frequency from a readout record.
//!
//! The log-likelihood of a record under trial frequency `f` is the log of the
//! norm of `M_N ... M_1 rho`, where each step operator is the measurement
//! element for readout `r_j` followed by one bin of drive. Rather than forming
//! matrix products, the state vector itself is propagated (2 components for a
//! pure state under the ideal model, 4 for the paravector), and the running
//! norm is folded into a log accumulator whenever it leaves a safe range. The
//! readout-dependent factors do not depend on `f` and are computed once per
//! record in [`Likelihood::new`]; only the drive rotation changes across the
//! grid.
//!
//! All frequencies at this API are in MHz; gradients are per MHz.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{measurement_block_nonideal, mhz_to_omega, MeasurementModel, ParaState, PureState};

const RESCALE_HI: f64 = 1e100;
const RESCALE_LO: f64 = 1e-100;

/// Known state at the start of the record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Pure(PureState),
    Para(ParaState),
}

impl InitialState {
    pub fn to_para(&self) -> ParaState {
        match self {
            InitialState::Pure(s) => s.normalized().to_para(),
            InitialState::Para(s) => s.normalized(),
        }
    }
}

/// Which propagator family evaluates the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// 2x2 real amplitudes; ideal model and pure initial state only.
    Pure,
    /// 4x4 paravector with the ideal hyperbolic measurement boost.
    ParaIdeal,
    /// 4x4 paravector with decay, relaxation and inefficiency.
    ParaNonideal,
}

impl Propagation {
    /// Cheapest propagation that is exact for `model` and `initial`.
    pub fn for_model(model: &MeasurementModel, initial: &InitialState) -> Self {
        match (model.is_ideal(), initial) {
            (true, InitialState::Pure(_)) => Propagation::Pure,
            (true, InitialState::Para(_)) => Propagation::ParaIdeal,
            (false, _) => Propagation::ParaNonideal,
        }
    }
}

#[derive(Debug, Clone)]
enum Steps {
    /// `e^{-a_j/2}`, `e^{+a_j/2}` per sample.
    Pure { lo: Vec<f64>, hi: Vec<f64>, init: [f64; 2] },
    /// Row-major `(z, p)` block per sample and the common transverse factor.
    Para { blocks: Vec<[f64; 4]>, dephasing: f64, init: [f64; 3] },
}

/// Log-likelihood of one record as a function of trial frequency.
#[derive(Debug, Clone)]
pub struct Likelihood {
    dt: f64,
    n: usize,
    steps: Steps,
    propagation: Propagation,
}

impl Likelihood {
    /// Precompute step factors with the propagation chosen by [`Propagation::for_model`].
    pub fn new(samples: &[f64], model: &MeasurementModel, initial: InitialState) -> Result<Self> {
        Self::with_propagation(samples, model, initial, Propagation::for_model(model, &initial))
    }

    pub fn with_propagation(
        samples: &[f64],
        model: &MeasurementModel,
        initial: InitialState,
        propagation: Propagation,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("readout record"));
        }
        if let Some(step) = samples.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        let steps = match propagation {
            Propagation::Pure => {
                if !model.is_ideal() {
                    return Err(Error::invalid("propagation", "the 2x2 path requires the ideal model"));
                }
                let InitialState::Pure(psi) = initial else {
                    return Err(Error::invalid("initial", "the 2x2 path requires a pure initial state"));
                };
                let psi = psi.normalized();
                let (lo, hi) = samples
                    .iter()
                    .map(|&r| {
                        let half = 0.5 * model.rapidity(r);
                        ((-half).exp(), half.exp())
                    })
                    .unzip();
                Steps::Pure { lo, hi, init: [psi.a0, psi.a1] }
            }
            Propagation::ParaIdeal | Propagation::ParaNonideal => {
                let s = initial.to_para();
                let ideal = propagation == Propagation::ParaIdeal;
                let blocks = samples
                    .iter()
                    .map(|&r| {
                        if ideal {
                            let a = model.rapidity(r);
                            let (ch, sh) = (a.cosh(), a.sinh());
                            [ch, sh, sh, ch]
                        } else {
                            let b = measurement_block_nonideal(r, model);
                            [b[0][0], b[0][1], b[1][0], b[1][1]]
                        }
                    })
                    .collect();
                let dephasing = if ideal { 1.0 } else { (-model.gamma() * model.dt()).exp() };
                Steps::Para { blocks, dephasing, init: [s.x, s.z, s.p] }
            }
        };
        Ok(Self { dt: model.dt(), n: samples.len(), steps, propagation })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn propagation(&self) -> Propagation {
        self.propagation
    }

    /// Record duration in microseconds.
    pub fn duration(&self) -> f64 {
        self.n as f64 * self.dt
    }

    /// Log-likelihood at `f_mhz`, up to an additive constant independent of frequency.
    pub fn log_likelihood(&self, f_mhz: f64) -> Result<f64> {
        let omega = mhz_to_omega(f_mhz);
        match &self.steps {
            Steps::Pure { lo, hi, init } => {
                let (s, c) = (0.5 * omega * self.dt).sin_cos();
                let [mut v0, mut v1] = *init;
                let mut acc = 0.0;
                for (j, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                    let (u0, u1) = (l * v0, h * v1);
                    v0 = c * u0 - s * u1;
                    v1 = s * u0 + c * u1;
                    let n2 = v0 * v0 + v1 * v1;
                    if !(n2 > RESCALE_LO && n2 < RESCALE_HI) {
                        if !n2.is_finite() || n2 <= 0.0 {
                            return Err(Error::NonFinite { step: j });
                        }
                        acc += n2.ln();
                        let inv = n2.sqrt().recip();
                        v0 *= inv;
                        v1 *= inv;
                    }
                }
                Ok(acc + (v0 * v0 + v1 * v1).ln())
            }
            Steps::Para { blocks, dephasing, init } => {
                // y never feeds back into (x, z, p) and is not tracked.
                let (s, c) = (omega * self.dt).sin_cos();
                let d = *dephasing;
                let [mut x, mut z, mut p] = *init;
                let mut acc = 0.0;
                for (j, b) in blocks.iter().enumerate() {
                    let xm = d * x;
                    let zm = b[0] * z + b[1] * p;
                    p = b[2] * z + b[3] * p;
                    x = c * xm - s * zm;
                    z = s * xm + c * zm;
                    if !(p > RESCALE_LO && p < RESCALE_HI) {
                        if !p.is_finite() || p <= 0.0 {
                            return Err(Error::NonFinite { step: j });
                        }
                        acc += p.ln();
                        let inv = p.recip();
                        x *= inv;
                        z *= inv;
                        p = 1.0;
                    }
                }
                Ok(acc + p.ln())
            }
        }
    }

    /// Log-likelihood and its derivative with respect to frequency (per MHz),
    /// propagating the state and its frequency derivative together.
    pub fn log_likelihood_gradient(&self, f_mhz: f64) -> Result<(f64, f64)> {
        let omega = mhz_to_omega(f_mhz);
        let dl_domega = match &self.steps {
            Steps::Pure { lo, hi, init } => {
                let half_dt = 0.5 * self.dt;
                let (s, c) = (omega * half_dt).sin_cos();
                let [mut v0, mut v1] = *init;
                let (mut w0, mut w1) = (0.0, 0.0);
                let mut acc = 0.0;
                for (j, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                    let (u0, u1) = (l * v0, h * v1);
                    let (du0, du1) = (l * w0, h * w1);
                    v0 = c * u0 - s * u1;
                    v1 = s * u0 + c * u1;
                    // d/dOmega of the rotation is half_dt * [[-s, -c], [c, -s]].
                    w0 = c * du0 - s * du1 + half_dt * (-s * u0 - c * u1);
                    w1 = s * du0 + c * du1 + half_dt * (c * u0 - s * u1);
                    let n2 = v0 * v0 + v1 * v1;
                    if !(n2 > RESCALE_LO && n2 < RESCALE_HI) {
                        if !n2.is_finite() || n2 <= 0.0 {
                            return Err(Error::NonFinite { step: j });
                        }
                        acc += n2.ln();
                        let inv = n2.sqrt().recip();
                        v0 *= inv;
                        v1 *= inv;
                        w0 *= inv;
                        w1 *= inv;
                    }
                }
                let n2 = v0 * v0 + v1 * v1;
                (acc + n2.ln(), 2.0 * (v0 * w0 + v1 * w1) / n2)
            }
            Steps::Para { blocks, dephasing, init } => {
                let (s, c) = (omega * self.dt).sin_cos();
                let d = *dephasing;
                let [mut x, mut z, mut p] = *init;
                let (mut dx, mut dz, mut dp) = (0.0, 0.0, 0.0);
                let mut acc = 0.0;
                for (j, b) in blocks.iter().enumerate() {
                    let xm = d * x;
                    let zm = b[0] * z + b[1] * p;
                    let dxm = d * dx;
                    let dzm = b[0] * dz + b[1] * dp;
                    p = b[2] * z + b[3] * p;
                    dp = b[2] * dz + b[3] * dp;
                    x = c * xm - s * zm;
                    z = s * xm + c * zm;
                    dx = c * dxm - s * dzm + self.dt * (-s * xm - c * zm);
                    dz = s * dxm + c * dzm + self.dt * (c * xm - s * zm);
                    if !(p > RESCALE_LO && p < RESCALE_HI) {
                        if !p.is_finite() || p <= 0.0 {
                            return Err(Error::NonFinite { step: j });
                        }
                        acc += p.ln();
                        let inv = p.recip();
                        x *= inv;
                        z *= inv;
                        dx *= inv;
                        dz *= inv;
                        dp *= inv;
                        p = 1.0;
                    }
                }
                (acc + p.ln(), dp / p)
            }
        };
        let (l, g) = dl_domega;
        Ok((l, g * mhz_to_omega(1.0)))
    }
}

/// Gaussian prior on the frequency, in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: f64,
    pub std: f64,
}

impl GaussianPrior {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !mean.is_finite() {
            return Err(Error::invalid("prior", format!("need finite mean and std > 0, got ({mean}, {std})")));
        }
        Ok(Self { mean, std })
    }

    /// `ln P_prior(f)` with constants dropped.
    pub fn log_density(&self, f_mhz: f64) -> f64 {
        let u = (f_mhz - self.mean) / self.std;
        -0.5 * u * u
    }

    /// Curvature `1 / std^2` of the negative log-prior.
    pub fn precision(&self) -> f64 {
        self.std.powi(-2)
    }
}

/// A scalar function of frequency to be maximized.
pub trait Objective: Sync {
    fn value(&self, f_mhz: f64) -> Result<f64>;
}

impl<F> Objective for F
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    fn value(&self, f_mhz: f64) -> Result<f64> {
        self(f_mhz)
    }
}

/// Log-likelihood plus an optional log-prior.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    pub likelihood: &'a Likelihood,
    pub prior: Option<GaussianPrior>,
}

impl Objective for Posterior<'_> {
    fn value(&self, f_mhz: f64) -> Result<f64> {
        let l = self.likelihood.log_likelihood(f_mhz)?;
        Ok(l + self.prior.map_or(0.0, |p| p.log_density(f_mhz)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridOrigin {
    Uniform,
    Refined,
    Seeded,
}

/// Strictly increasing trial frequencies in MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    values: Vec<f64>,
    origin: GridOrigin,
}

impl FrequencyGrid {
    pub fn new(values: Vec<f64>, origin: GridOrigin) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::invalid("grid", format!("need at least 3 points, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid", "values must be finite and strictly increasing"));
        }
        Ok(Self { values, origin })
    }

    /// `n` equally spaced points on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n < 3 {
            return Err(Error::invalid("grid", format!("need hi > lo and n >= 3, got [{lo}, {hi}] n={n}")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        values[n - 1] = hi;
        Self::new(values, GridOrigin::Uniform)
    }

    /// Uniform grid over `[lo, hi]` with spacing at most `max_spacing`.
    pub fn with_spacing(lo: f64, hi: f64, max_spacing: f64) -> Result<Self> {
        let n = (((hi - lo) / max_spacing).ceil() as usize + 1).max(3);
        Self::uniform(lo, hi, n)
    }

    /// `n` points centered on `center` with the given spacing.
    pub fn centered(center: f64, spacing: f64, n: usize) -> Result<Self> {
        let half = (n as f64 - 1.0) / 2.0;
        let values = (0..n).map(|i| center + (i as f64 - half) * spacing).collect();
        Self::new(values, GridOrigin::Refined)
    }

    pub fn with_origin(mut self, origin: GridOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn origin(&self) -> GridOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.values[0], self.values[self.values.len() - 1])
    }

    /// Largest gap between neighbouring points.
    pub fn spacing(&self) -> f64 {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Objective values sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodCurve {
    pub grid: FrequencyGrid,
    pub loglik: Vec<f64>,
}

impl LikelihoodCurve {
    /// Index of the maximum; the lowest frequency wins ties.
    pub fn argmax(&self) -> usize {
        argmax_first(&self.loglik)
    }

    pub fn max(&self) -> (f64, f64) {
        let i = self.argmax();
        (self.grid.values()[i], self.loglik[i])
    }

    /// CSV with columns `f_mhz,loglik`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("f_mhz,loglik\n");
        for (f, l) in self.grid.values().iter().zip(&self.loglik) {
            out.push_str(&format!("{f},{l}\n"));
        }
        out
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Evaluate `objective` at every grid point, in parallel, in grid order.
pub fn grid_evaluate<O: Objective + ?Sized>(objective: &O, grid: &FrequencyGrid) -> Result<LikelihoodCurve> {
    let loglik = grid.values().par_iter().map(|&f| objective.value(f)).collect::<Result<Vec<_>>>()?;
    if loglik.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(LikelihoodCurve { grid: grid.clone(), loglik })
}

/// Least-squares parabola `L = c0 + c1 (f - f_ref) + c2 (f - f_ref)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolaFit {
    pub f_ref: f64,
    pub coeffs: [f64; 3],
}

impl ParabolaFit {
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::invalid("fit", "need at least 3 points"));
        }
        let f_ref = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
        let scale = points.iter().map(|p| (p.0 - f_ref).abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::invalid("fit", "points share one abscissa"));
        }
        // Normal equations in the scaled abscissa u = (f - f_ref) / scale.
        let mut a = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for &(f, l) in points {
            let u = (f - f_ref) / scale;
            let basis = [1.0, u, u * u];
            for i in 0..3 {
                rhs[i] += basis[i] * l;
                for j in 0..3 {
                    a[i][j] += basis[i] * basis[j];
                }
            }
        }
        let sol = solve3(a, rhs).ok_or_else(|| Error::invalid("fit", "singular normal equations"))?;
        Ok(Self { f_ref, coeffs: [sol[0], sol[1] / scale, sol[2] / (scale * scale)] })
    }

    pub fn curvature(&self) -> f64 {
        2.0 * self.coeffs[2]
    }

    pub fn vertex(&self) -> f64 {
        self.f_ref - self.coeffs[1] / (2.0 * self.coeffs[2])
    }

    /// Width `sigma` of `L ~ const - (f - f0)^2 / (2 sigma^2)`; NaN when not concave.
    pub fn sigma(&self) -> f64 {
        if self.coeffs[2] < 0.0 {
            (-0.5 / self.coeffs[2]).sqrt()
        } else {
            f64::NAN
        }
    }

    pub fn eval(&self, f: f64) -> f64 {
        let u = f - self.f_ref;
        self.coeffs[0] + u * (self.coeffs[1] + u * self.coeffs[2])
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let k = a[row][col] / a[col][col];
            for j in col..3 {
                a[row][j] -= k * a[col][j];
            }
            b[row] -= k * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let tail: f64 = (i + 1..3).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - tail) / a[i][i];
    }
    Some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Spacing reduction per refinement round.
    pub shrink: f64,
    /// Points per refinement grid.
    pub points_per_round: usize,
    /// Stop refining once the spacing is below this (MHz).
    pub target_resolution_mhz: f64,
    /// Fit the parabola over points within this drop of the maximum.
    pub fit_drop: f64,
    pub max_rounds: usize,
}

impl RefineOptions {
    /// Defaults for a record of `duration_us`: resolution `1 / (10 T)`.
    pub fn for_duration(duration_us: f64) -> Self {
        Self {
            shrink: 5.0,
            points_per_round: 21,
            target_resolution_mhz: 0.1 / duration_us,
            fit_drop: 2.0,
            max_rounds: 30,
        }
    }
}

/// Outcome of a grid search plus parabolic fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub f_ml_mhz: f64,
    pub sigma_mhz: f64,
    pub loglik_max: f64,
    /// Frequency range of the points used in the parabola fit.
    pub fit_range_mhz: (f64, f64),
    pub fit_points: usize,
    /// Concave fit with its vertex inside the fit window.
    pub converged: bool,
    /// The initial grid's maximum sat on its first or last point.
    pub at_boundary: bool,
    pub evaluations: usize,
}

impl EstimateResult {
    pub fn is_reliable(&self) -> bool {
        self.converged && !self.at_boundary
    }
}

struct Pool<'o, O: ?Sized> {
    objective: &'o O,
    points: Vec<(f64, f64)>,
}

impl<'o, O: Objective + ?Sized> Pool<'o, O> {
    fn add_grid(&mut self, values: &[f64]) -> Result<()> {
        let new: Vec<f64> = values.iter().copied().filter(|f| !self.points.iter().any(|p| p.0 == *f)).collect();
        let vals = new.par_iter().map(|&f| self.objective.value(f)).collect::<Result<Vec<_>>>()?;
        if vals.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        self.points.extend(new.into_iter().zip(vals));
        self.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(())
    }

    fn best_index(&self) -> usize {
        argmax_first(&self.points.iter().map(|p| p.1).collect::<Vec<_>>())
    }

    fn best(&self) -> (f64, f64) {
        self.points[self.best_index()]
    }

    /// The contiguous run of points at or above `threshold` containing the maximum.
    fn peak_run(&self, threshold: f64) -> Vec<(f64, f64)> {
        let i = self.best_index();
        let mut lo = i;
        while lo > 0 && self.points[lo - 1].1 >= threshold {
            lo -= 1;
        }
        let mut hi = i;
        while hi + 1 < self.points.len() && self.points[hi + 1].1 >= threshold {
            hi += 1;
        }
        self.points[lo..=hi].to_vec()
    }
}

/// Adaptive grid search: evaluate `initial`, repeatedly re-grid around the
/// running maximum with spacing reduced by `shrink` until it falls below the
/// target resolution, then fit a parabola to the evaluated points within
/// `fit_drop` of the maximum, keeping only the run of such points around the
/// maximum so that a secondary peak cannot enter the fit.
pub fn refine_and_fit<O: Objective + ?Sized>(
    objective: &O,
    initial: &FrequencyGrid,
    opts: &RefineOptions,
) -> Result<EstimateResult> {
    if !(opts.shrink > 1.0) || opts.points_per_round < 3 || !(opts.target_resolution_mhz > 0.0) {
        return Err(Error::invalid("refine options", format!("{opts:?}")));
    }
    let mut pool = Pool { objective, points: Vec::with_capacity(initial.len() + 64) };
    pool.add_grid(initial.values())?;
    let curve_max = argmax_first(&pool.points.iter().map(|p| p.1).collect::<Vec<_>>());
    let at_boundary = curve_max == 0 || curve_max == initial.len() - 1;

    let mut spacing = initial.spacing();
    let mut rounds = 0;
    while spacing >= opts.target_resolution_mhz && rounds < opts.max_rounds {
        spacing /= opts.shrink;
        let grid = FrequencyGrid::centered(pool.best().0, spacing, opts.points_per_round)?;
        pool.add_grid(grid.values())?;
        rounds += 1;
    }

    let (f_best, l_best) = pool.best();
    let threshold = l_best - opts.fit_drop;

    // Make sure the fit window is bracketed by points below the threshold.
    let mut step = spacing * 2.0;
    for _ in 0..40 {
        let below_left = pool.points.iter().any(|p| p.0 < f_best && p.1 < threshold);
        let below_right = pool.points.iter().any(|p| p.0 > f_best && p.1 < threshold);
        if below_left && below_right {
            break;
        }
        let mut probe = Vec::new();
        if !below_left {
            probe.push(f_best - step);
        }
        if !below_right {
            probe.push(f_best + step);
        }
        pool.add_grid(&probe)?;
        step *= 2.0;
    }
    if pool.peak_run(threshold).len() < 7 {
        let lo = pool.points.iter().rev().find(|p| p.0 < f_best && p.1 < threshold).map_or(f_best - step, |p| p.0);
        let hi = pool.points.iter().find(|p| p.0 > f_best && p.1 < threshold).map_or(f_best + step, |p| p.0);
        let fill = FrequencyGrid::uniform(lo, hi, 13)?;
        pool.add_grid(&fill.values()[1..12])?;
    }
    let (f_best, l_best) = pool.best();
    let threshold = l_best - opts.fit_drop;
    let window = pool.peak_run(threshold);
    let fit_range = (window[0].0, window[window.len() - 1].0);

    let (mut f_ml, mut sigma, mut converged) = (f_best, f64::NAN, false);
    if window.len() >= 3 {
        if let Ok(fit) = ParabolaFit::fit(&window) {
            sigma = fit.sigma();
            if sigma.is_finite() {
                let vertex = fit.vertex();
                if (fit_range.0..=fit_range.1).contains(&vertex) {
                    f_ml = vertex;
                    converged = true;
                }
            }
        }
    }
    if !converged {
        log::debug!("parabola fit not concave around {f_best} MHz ({} points)", window.len());
    }
    let (lo, hi) = initial.span();
    let at_boundary = at_boundary || f_ml < lo || f_ml > hi;
    Ok(EstimateResult {
        f_ml_mhz: f_ml.clamp(lo, hi),
        sigma_mhz: sigma,
        loglik_max: l_best,
        fit_range_mhz: fit_range,
        fit_points: window.len(),
        converged,
        at_boundary,
        evaluations: pool.points.len(),
    })
}

/// Grid-search estimate over `[lo, hi]` with initial spacing `1 / (4 T)`.
pub fn estimate_in_band(
    likelihood: &Likelihood,
    band_mhz: (f64, f64),
    prior: Option<GaussianPrior>,
) -> Result<EstimateResult> {
    let duration = likelihood.duration();
    let grid = FrequencyGrid::with_spacing(band_mhz.0, band_mhz.1, 0.25 / duration)?;
    refine_and_fit(&Posterior { likelihood, prior }, &grid, &RefineOptions::for_duration(duration))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Converged once the Newton step `|g / L''|` is below this (MHz).
    pub step_tol_mhz: f64,
    /// Step for the initial finite-difference curvature (MHz).
    pub fd_step_mhz: f64,
    /// Leaving `start +- max_excursion` counts as divergence.
    pub max_excursion_mhz: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 20, step_tol_mhz: 1e-9, fd_step_mhz: 1e-4, max_excursion_mhz: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub f_mhz: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Newton steps diverged and a local grid refinement produced the result.
    pub fell_back: bool,
    /// `|dL/df|` at every accepted iterate, starting point first.
    pub grad_history: Vec<f64>,
}

/// Safeguarded Newton/secant ascent on the analytic gradient from `start`.
pub fn newton_polish(likelihood: &Likelihood, start_mhz: f64, opts: &NewtonOptions) -> Result<NewtonResult> {
    let (_, mut g) = likelihood.log_likelihood_gradient(start_mhz)?;
    let h = opts.fd_step_mhz;
    let (_, gp) = likelihood.log_likelihood_gradient(start_mhz + h)?;
    let (_, gm) = likelihood.log_likelihood_gradient(start_mhz - h)?;
    let mut curv = (gp - gm) / (2.0 * h);
    let mut f = start_mhz;
    let mut history = vec![g.abs()];
    let mut diverged = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if !(curv < 0.0) {
            diverged = true;
            break;
        }
        let mut step = -g / curv;
        if step.abs() < opts.step_tol_mhz {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = f + step;
            let (_, gc) = likelihood.log_likelihood_gradient(cand)?;
            if gc.abs() < g.abs() {
                accepted = Some((cand, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((f_new, g_new)) = accepted else {
            // No decrease in |g| at any step length: stationary to working precision.
            converged = step.abs() < 1e3 * opts.step_tol_mhz;
            diverged = !converged;
            break;
        };
        curv = (g_new - g) / (f_new - f);
        f = f_new;
        g = g_new;
        history.push(g.abs());
        if (f - start_mhz).abs() > opts.max_excursion_mhz {
            diverged = true;
            break;
        }
    }

    if diverged || !converged {
        let half = opts.max_excursion_mhz;
        let grid = FrequencyGrid::uniform(start_mhz - half, start_mhz + half, 41)?;
        let refine = RefineOptions { target_resolution_mhz: h, ..RefineOptions::for_duration(likelihood.duration()) };
        let est = refine_and_fit(&Posterior { likelihood, prior: None }, &grid, &refine)?;
        return Ok(NewtonResult {
            f_mhz: est.f_ml_mhz,
            iterations,
            converged: false,
            fell_back: true,
            grad_history: history,
        });
    }
    Ok(NewtonResult { f_mhz: f, iterations, converged, fell_back: false, grad_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal() -> MeasurementModel {
        MeasurementModel::ideal(1.0, 0.01).unwrap()
    }

    #[test]
    fn single_uninformative_step_is_flat() {
        let lik = Likelihood::new(&[0.0], &ideal(), InitialState::Pure(PureState::GROUND)).unwrap();
        let a = lik.log_likelihood(0.3).unwrap();
        let b = lik.log_likelihood(2.7).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn zero_record_curve_is_flat() {
        let lik = Likelihood::new(&vec![0.0; 500], &ideal(), InitialState::Pure(PureState::GROUND)).unwrap();
        let curve =
            grid_evaluate(&Posterior { likelihood: &lik, prior: None }, &FrequencyGrid::uniform(0.0, 3.0, 31).unwrap())
                .unwrap();
        let (lo, hi) = curve.loglik.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi - lo < 1e-9);
    }

    #[test]
    fn path_guards() {
        let m = MeasurementModel::new(1.0, 0.01, 0.5, 10.0, 10.0).unwrap();
        assert!(
            Likelihood::with_propagation(&[0.1], &m, InitialState::Pure(PureState::GROUND), Propagation::Pure).is_err()
        );
        assert!(Likelihood::with_propagation(
            &[0.1],
            &ideal(),
            InitialState::Para(ParaState::MIXED),
            Propagation::Pure
        )
        .is_err());
        assert!(Likelihood::new(&[], &ideal(), InitialState::Pure(PureState::GROUND)).is_err());
        assert!(matches!(
            Likelihood::new(&[0.1, f64::INFINITY], &ideal(), InitialState::Pure(PureState::GROUND)),
            Err(Error::NonFinite { step: 1 })
        ));
        assert_eq!(Propagation::for_model(&m, &InitialState::Pure(PureState::GROUND)), Propagation::ParaNonideal);
        assert_eq!(Propagation::for_model(&ideal(), &InitialState::Para(ParaState::MIXED)), Propagation::ParaIdeal);
    }

    #[test]
    fn rescaling_survives_extreme_records() {
        // Every step multiplies the norm by ~e^{+-1}; without rescaling this overflows.
        let m = MeasurementModel::ideal(0.01, 0.01).unwrap();
        let samples: Vec<f64> = (0..5000).map(|j| if j % 7 == 0 { -2.0 } else { 2.0 }).collect();
        for init in [InitialState::Pure(PureState::PLUS), InitialState::Para(ParaState::MIXED)] {
            let lik = Likelihood::new(&samples, &m, init).unwrap();
            let (l, g) = lik.log_likelihood_gradient(0.7).unwrap();
            assert!(l.is_finite() && g.is_finite());
            assert!(l > 1000.0);
        }
    }

    #[test]
    fn prior_contract() {
        assert!(GaussianPrior::new(1.0, 0.0).is_err());
        assert!(GaussianPrior::new(f64::NAN, 1.0).is_err());
        let p = GaussianPrior::new(1.0, 0.1).unwrap();
        assert_eq!(p.log_density(1.0), 0.0);
        assert!((p.log_density(1.1) + 0.5).abs() < 1e-12);
        assert!((p.precision() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn grid_contract() {
        assert!(FrequencyGrid::new(vec![0.0, 1.0], GridOrigin::Uniform).is_err());
        assert!(FrequencyGrid::new(vec![0.0, 1.0, 1.0], GridOrigin::Uniform).is_err());
        let g = FrequencyGrid::uniform(0.5, 1.5, 11).unwrap();
        assert_eq!(g.span(), (0.5, 1.5));
        assert!((g.spacing() - 0.1).abs() < 1e-12);
        let g = FrequencyGrid::with_spacing(0.0, 2.0, 0.025).unwrap();
        assert_eq!(g.len(), 81);
        let c = FrequencyGrid::centered(1.0, 0.01, 21).unwrap();
        assert!((c.values()[10] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_frequency() {
        let curve = LikelihoodCurve {
            grid: FrequencyGrid::uniform(0.0, 1.0, 5).unwrap(),
            loglik: vec![0.0, 2.0, 1.0, 2.0, 2.0],
        };
        assert_eq!(curve.argmax(), 1);
        assert!(curve.to_csv().starts_with("f_mhz,loglik\n0,0\n"));
    }

    #[test]
    fn parabola_exact_on_quadratic() {
        let (f0, sigma, c) = (1.0025, 0.0026, -37.5);
        let pts: Vec<(f64, f64)> = (0..15)
            .map(|i| {
                let f = 0.99 + 0.0017 * i as f64;
                (f, c - (f - f0).powi(2) / (2.0 * sigma * sigma))
            })
            .collect();
        let fit = ParabolaFit::fit(&pts).unwrap();
        assert!((fit.vertex() - f0).abs() < 1e-10);
        assert!((fit.sigma() - sigma).abs() < 1e-10);
        assert!((fit.eval(f0) - c).abs() < 1e-6);
    }

    #[test]
    fn refine_recovers_synthetic_peak() {
        let (f0, sigma) = (1.23456, 0.004);
        let objective = |f: f64| -> Result<f64> { Ok(7.0 - (f - f0).powi(2) / (2.0 * sigma * sigma)) };
        let grid = FrequencyGrid::uniform(0.5, 2.0, 61).unwrap();
        let opts = RefineOptions::for_duration(1000.0);
        let est = refine_and_fit(&objective, &grid, &opts).unwrap();
        assert!(est.converged && !est.at_boundary);
        assert!((est.f_ml_mhz - f0).abs() < 1e-10);
        assert!((est.sigma_mhz - sigma).abs() < 1e-10);
        assert!(est.fit_points >= 7);
    }

    #[test]
    fn refine_flags_boundary_and_convexity() {
        let rising = |f: f64| -> Result<f64> { Ok(100.0 * f) };
        let est =
            refine_and_fit(&rising, &FrequencyGrid::uniform(0.0, 1.0, 11).unwrap(), &RefineOptions::for_duration(40.0))
                .unwrap();
        assert!(est.at_boundary);
        assert!(est.f_ml_mhz <= 1.0);

        let valley = |f: f64| -> Result<f64> { Ok((f - 0.5).powi(2) * 1e4) };
        let est =
            refine_and_fit(&valley, &FrequencyGrid::uniform(0.0, 1.0, 11).unwrap(), &RefineOptions::for_duration(40.0))
                .unwrap();
        assert!(!est.converged);
    }

    #[test]
    fn prior_only_objective_returns_prior_mean() {
        let lik = Likelihood::new(&vec![0.0; 100], &ideal(), InitialState::Pure(PureState::GROUND)).unwrap();
        let prior = GaussianPrior::new(0.8, 0.01).unwrap();
        let post = Posterior { likelihood: &lik, prior: Some(prior) };
        let est =
            refine_and_fit(&post, &FrequencyGrid::uniform(0.7, 0.9, 21).unwrap(), &RefineOptions::for_duration(1.0))
                .unwrap();
        assert!((est.f_ml_mhz - 0.8).abs() < 1e-9);
        assert!((est.sigma_mhz - 0.01).abs() < 1e-9);
    }
}
