//! Physical model of a continuously measured, Rabi-driven qubit.
//!
//! The qubit is driven about Y at angular frequency `omega` (rad/us) while its
//! Z observable is monitored with characteristic measurement time `tau_m`. Each
//! time bin of width `dt` produces one readout `r`. Two equivalent state
//! representations are supported:
//!
//! * [`PureState`]: two real amplitudes, propagated by 2x2 real matrices. Valid
//!   for the ideal model (unit efficiency, no T1/T2) with a pure start.
//! * [`ParaState`]: the Bloch paravector `(x, y, z, p)` with explicit norm `p`,
//!   propagated by 4x4 real matrices. Covers mixed states and decoherence.
//!
//! Both use the rescaled measurement element `diag(e^{-a}, e^{+a})`, with
//! `a = r * dt / tau_m`, in place of the normalized Gaussian POVM. The dropped
//! factor depends only on `r`, so it shifts log-likelihoods by a constant.
//!
//! Coordinate convention: the drive moves the Bloch vector in the x-z plane,
//! so the paravector rotation acts on `(x, z)` and leaves `(y, p)` alone; the
//! measurement boost acts on `(z, p)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];
pub type Mat4 = [[f64; 4]; 4];

/// Ratio `dt / tau_m` above which the time-sliced model is a poor approximation.
pub const COARSE_BIN_RATIO: f64 = 0.1;

/// Calibration parameters of the measurement chain. Times in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParams", into = "ModelParams")]
pub struct MeasurementModel {
    tau_m: f64,
    dt: f64,
    eta: f64,
    t1: f64,
    t2: f64,
}

impl MeasurementModel {
    pub fn new(tau_m: f64, dt: f64, eta: f64, t1: f64, t2: f64) -> Result<Self> {
        if !(tau_m > 0.0 && tau_m.is_finite()) {
            return Err(Error::invalid("tau_m", format!("must be positive and finite, got {tau_m}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive and finite, got {dt}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid("eta", format!("must lie in (0, 1], got {eta}")));
        }
        if !(t1 > 0.0) {
            return Err(Error::invalid("t1", format!("must be positive (or infinite), got {t1}")));
        }
        if !(t2 > 0.0) {
            return Err(Error::invalid("t2", format!("must be positive (or infinite), got {t2}")));
        }
        if dt / tau_m > COARSE_BIN_RATIO {
            log::warn!(
                "dt/tau_m = {:.3} exceeds {COARSE_BIN_RATIO}; the weak-measurement approximation is coarse",
                dt / tau_m
            );
        }
        Ok(Self { tau_m, dt, eta, t1, t2 })
    }

    /// Unit efficiency, no relaxation, no extra dephasing.
    pub fn ideal(tau_m: f64, dt: f64) -> Result<Self> {
        Self::new(tau_m, dt, 1.0, f64::INFINITY, f64::INFINITY)
    }

    pub fn tau_m(&self) -> f64 {
        self.tau_m
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    /// Measurement-induced dephasing rate `1 / (2 eta tau_m)`.
    pub fn gamma_m(&self) -> f64 {
        1.0 / (2.0 * self.eta * self.tau_m)
    }

    /// Total transverse decay rate `gamma_m + 1/T2 + 1/(2 T1)`.
    pub fn gamma(&self) -> f64 {
        self.gamma_m() + 1.0 / self.t2 + 0.5 / self.t1
    }

    pub fn is_ideal(&self) -> bool {
        self.eta == 1.0 && self.t1.is_infinite() && self.t2.is_infinite()
    }

    /// The same readout chain with every nonideality removed.
    pub fn without_nonidealities(&self) -> Self {
        Self { eta: 1.0, t1: f64::INFINITY, t2: f64::INFINITY, ..*self }
    }

    /// Boost rapidity `r dt / tau_m` for readout `r`.
    #[inline]
    pub fn rapidity(&self, r: f64) -> f64 {
        r * self.dt / self.tau_m
    }

    /// Per-bin readout noise standard deviation `sqrt(tau_m / dt)`.
    pub fn readout_std(&self) -> f64 {
        (self.tau_m / self.dt).sqrt()
    }
}

/// Serialized form. Infinite times are written as absent / null.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelParams {
    tau_m_us: f64,
    dt_us: f64,
    #[serde(default = "unit")]
    eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t1_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t2_us: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

impl TryFrom<ModelParams> for MeasurementModel {
    type Error = Error;

    fn try_from(p: ModelParams) -> Result<Self> {
        MeasurementModel::new(
            p.tau_m_us,
            p.dt_us,
            p.eta,
            p.t1_us.unwrap_or(f64::INFINITY),
            p.t2_us.unwrap_or(f64::INFINITY),
        )
    }
}

impl From<MeasurementModel> for ModelParams {
    fn from(m: MeasurementModel) -> Self {
        let finite = |t: f64| t.is_finite().then_some(t);
        ModelParams { tau_m_us: m.tau_m, dt_us: m.dt, eta: m.eta, t1_us: finite(m.t1), t2_us: finite(m.t2) }
    }
}

/// Real amplitudes of `|0>` (z = -1) and `|1>` (z = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureState {
    pub a0: f64,
    pub a1: f64,
}

impl PureState {
    pub const GROUND: PureState = PureState { a0: 1.0, a1: 0.0 };
    pub const EXCITED: PureState = PureState { a0: 0.0, a1: 1.0 };
    pub const PLUS: PureState = PureState { a0: std::f64::consts::FRAC_1_SQRT_2, a1: std::f64::consts::FRAC_1_SQRT_2 };

    pub fn norm_sqr(&self) -> f64 {
        self.a0 * self.a0 + self.a1 * self.a1
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self { a0: self.a0 / n, a1: self.a1 / n }
    }

    pub fn apply(&self, m: &Mat2) -> Self {
        Self { a0: m[0][0] * self.a0 + m[0][1] * self.a1, a1: m[1][0] * self.a0 + m[1][1] * self.a1 }
    }

    /// Unnormalized paravector of `|psi><psi|`; `p` carries the squared norm.
    pub fn to_para(&self) -> ParaState {
        ParaState { x: 2.0 * self.a0 * self.a1, y: 0.0, z: self.a1 * self.a1 - self.a0 * self.a0, p: self.norm_sqr() }
    }
}

/// Bloch paravector `(x, y, z, p)` of a possibly unnormalized density matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub p: f64,
}

impl ParaState {
    pub const GROUND: ParaState = ParaState { x: 0.0, y: 0.0, z: -1.0, p: 1.0 };
    pub const MIXED: ParaState = ParaState { x: 0.0, y: 0.0, z: 0.0, p: 1.0 };

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.p]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self { x: v[0], y: v[1], z: v[2], p: v[3] }
    }

    pub fn normalized(&self) -> Self {
        Self { x: self.x / self.p, y: self.y / self.p, z: self.z / self.p, p: 1.0 }
    }

    /// `(x^2 + y^2 + z^2) / p^2`; one for pure states.
    pub fn purity(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z) / (self.p * self.p)
    }

    pub fn apply(&self, m: &Mat4) -> Self {
        Self::from_array(mat4_vec(m, self.as_array()))
    }

    /// Population of `|1>` after normalization.
    pub fn excited_population(&self) -> f64 {
        0.5 * (1.0 + self.z / self.p)
    }
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat4_vec(m: &Mat4, v: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(&v).map(|(a, b)| a * b).sum();
    }
    out
}

pub const IDENTITY4: Mat4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

/// Amplitude propagator for one bin of drive: rotation by the half angle `omega dt / 2`.
pub fn rotation_matrix(omega: f64, dt: f64) -> Mat2 {
    let (s, c) = (0.5 * omega * dt).sin_cos();
    [[c, -s], [s, c]]
}

/// Square root of the rescaled measurement element, `diag(e^{-a/2}, e^{+a/2})`.
pub fn povm_sqrt_rescaled(r: f64, model: &MeasurementModel) -> Mat2 {
    let half = 0.5 * model.rapidity(r);
    [[(-half).exp(), 0.0], [0.0, half.exp()]]
}

/// Conditional readout density `P(r | k)`: Gaussian with mean `-1` (k = 0) or `+1`
/// (k = 1) and variance `tau_m / dt`.
pub fn readout_density(r: f64, excited: bool, model: &MeasurementModel) -> f64 {
    let mean = if excited { 1.0 } else { -1.0 };
    let ratio = model.dt / model.tau_m;
    (ratio / (2.0 * PI)).sqrt() * (-0.5 * ratio * (r - mean).powi(2)).exp()
}

/// Normalized POVM element `diag(P(r|0), P(r|1))`.
pub fn povm_element_normalized(r: f64, model: &MeasurementModel) -> Mat2 {
    [[readout_density(r, false, model), 0.0], [0.0, readout_density(r, true, model)]]
}

/// Paravector drive propagator: rotation of `(x, z)` by the full angle `omega dt`.
pub fn paravector_unitary(omega: f64, dt: f64) -> Mat4 {
    let (s, c) = (omega * dt).sin_cos();
    [[c, 0.0, -s, 0.0], [0.0, 1.0, 0.0, 0.0], [s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

/// Ideal measurement boost: hyperbolic rotation of `(z, p)` with rapidity `r dt / tau_m`.
pub fn paravector_measurement_ideal(r: f64, model: &MeasurementModel) -> Mat4 {
    let a = model.rapidity(r);
    let (ch, sh) = (a.cosh(), a.sinh());
    [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, ch, sh], [0.0, 0.0, sh, ch]]
}

/// `sinh(q) / q`, smooth through zero.
fn sinhc(q: f64) -> f64 {
    if q.abs() < 1e-4 {
        let q2 = q * q;
        1.0 + q2 / 6.0 * (1.0 + q2 / 20.0)
    } else {
        q.sinh() / q
    }
}

/// Closed-form `exp(dt * G)` for the `(z, p)` generator
/// `G = [[-1/T1, r/tau_m - 1/T1], [r/tau_m, 0]]`.
///
/// The eigenvalues of `dt G` are `dt (b - k)` and `-dt b` (b = r/tau_m, k = 1/T1),
/// so the exponential is `e^m [cosh(q) I + sinhc(q) (dt G - m I)]` with
/// `m = -k dt / 2` and `q = dt |2b - k| / 2`. `sinhc` removes the removable
/// singularity at the degenerate point `2b = k`.
pub fn measurement_block_nonideal(r: f64, model: &MeasurementModel) -> Mat2 {
    let k = 1.0 / model.t1;
    let b = r / model.tau_m;
    let dt = model.dt;
    let a = [[-k * dt, (b - k) * dt], [b * dt, 0.0]];
    let m = -0.5 * k * dt;
    let q = 0.5 * dt * (2.0 * b - k).abs();
    let (ch, sc) = (q.cosh(), sinhc(q));
    let em = m.exp();
    [[em * (ch + sc * (a[0][0] - m)), em * sc * a[0][1]], [em * sc * a[1][0], em * (ch + sc * (a[1][1] - m))]]
}

/// Nonideal measurement propagator: `exp(dt * G)` for the generator with
/// transverse decay `gamma` on `(x, y)` and relaxation plus boost on `(z, p)`.
pub fn paravector_measurement_nonideal(r: f64, model: &MeasurementModel) -> Mat4 {
    let d = (-model.gamma() * model.dt).exp();
    let b = measurement_block_nonideal(r, model);
    [[d, 0.0, 0.0, 0.0], [0.0, d, 0.0, 0.0], [0.0, 0.0, b[0][0], b[0][1]], [0.0, 0.0, b[1][0], b[1][1]]]
}

/// Measurement propagator appropriate for `model`: the ideal boost when the
/// model carries no nonidealities, the decohering form otherwise.
pub fn paravector_measurement(r: f64, model: &MeasurementModel) -> Mat4 {
    if model.is_ideal() {
        paravector_measurement_ideal(r, model)
    } else {
        paravector_measurement_nonideal(r, model)
    }
}

/// Frequency in MHz to angular frequency in rad/us.
#[inline]
pub fn mhz_to_omega(f: f64) -> f64 {
    2.0 * PI * f
}

/// Angular frequency in rad/us to frequency in MHz.
#[inline]
pub fn omega_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn max_abs_diff4(a: &Mat4, b: &Mat4) -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Truncated Taylor series of `exp(dt * G)` for the full nonideal generator.
    fn series_exp(r: f64, model: &MeasurementModel, terms: usize) -> Mat4 {
        let dt = model.dt();
        let k = 1.0 / model.t1();
        let b = r / model.tau_m();
        let g = model.gamma();
        let gen: Mat4 = [
            [-g * dt, 0.0, 0.0, 0.0],
            [0.0, -g * dt, 0.0, 0.0],
            [0.0, 0.0, -k * dt, (b - k) * dt],
            [0.0, 0.0, b * dt, 0.0],
        ];
        let mut out = IDENTITY4;
        let mut term = IDENTITY4;
        for n in 1..terms {
            term = mat4_mul(&term, &gen);
            for row in term.iter_mut() {
                for v in row.iter_mut() {
                    *v /= n as f64;
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    out[i][j] += term[i][j];
                }
            }
        }
        out
    }

    #[test]
    fn model_validation() {
        assert!(MeasurementModel::new(0.0, 0.01, 1.0, 1.0, 1.0).is_err());
        assert!(MeasurementModel::new(1.0, -0.01, 1.0, 1.0, 1.0).is_err());
        assert!(MeasurementModel::new(1.0, 0.01, 0.0, 1.0, 1.0).is_err());
        assert!(MeasurementModel::new(1.0, 0.01, 1.5, 1.0, 1.0).is_err());
        assert!(MeasurementModel::new(1.0, 0.01, 1.0, 0.0, 1.0).is_err());
        assert!(MeasurementModel::new(1.0, 0.01, 1.0, 1.0, f64::NAN).is_err());
        // Coarse bins only warn.
        assert!(MeasurementModel::ideal(0.05, 0.01).is_ok());
    }

    #[test]
    fn derived_rates() {
        let m = MeasurementModel::new(0.65, 0.01, 0.5, 50.0, 30.0).unwrap();
        assert_abs_diff_eq!(m.gamma_m(), 1.0 / 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(m.gamma(), 1.0 / 0.65 + 1.0 / 30.0 + 1.0 / 100.0, epsilon = 1e-15);
        let ideal = MeasurementModel::ideal(1.0, 0.01).unwrap();
        assert!(ideal.is_ideal());
        assert!(!m.is_ideal());
        assert!(m.without_nonidealities().is_ideal());
        assert_abs_diff_eq!(ideal.gamma(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn model_serde_infinite_times() {
        let m = MeasurementModel::ideal(1.0, 0.01).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(!json.contains("t1"));
        let back: MeasurementModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let bad: std::result::Result<MeasurementModel, _> = serde_json::from_str(r#"{"tau_m_us":-1,"dt_us":0.01}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn rotation_examples() {
        let id = rotation_matrix(0.0, 0.01);
        assert_eq!(id, [[1.0, 0.0], [0.0, 1.0]]);
        let q = rotation_matrix(PI, 1.0);
        assert_abs_diff_eq!(q[0][0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[0][1], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1][0], 1.0, epsilon = 1e-15);
        let h = rotation_matrix(2.0 * PI, 1.0);
        assert_abs_diff_eq!(h[0][0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h[1][1], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h[0][1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rescaled_povm_examples() {
        let m = MeasurementModel::ideal(1.0, 0.01).unwrap();
        assert_eq!(povm_sqrt_rescaled(0.0, &m), [[1.0, 0.0], [0.0, 1.0]]);
        let e = povm_sqrt_rescaled(1.0, &m);
        assert_abs_diff_eq!(e[0][0], (-0.005f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(e[1][1], 0.005f64.exp(), epsilon = 1e-15);
        let sq = mat2_mul(&e, &e);
        assert_abs_diff_eq!(sq[0][0], (-0.01f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(sq[1][1], 0.01f64.exp(), epsilon = 1e-15);
    }

    #[test]
    fn normalized_povm_examples() {
        let m = MeasurementModel::ideal(1.0, 0.01).unwrap();
        let peak = povm_element_normalized(-1.0, &m)[0][0];
        assert_abs_diff_eq!(peak, (0.01 / (2.0 * PI)).sqrt(), epsilon = 1e-15);
        let mid = povm_element_normalized(0.0, &m);
        assert_abs_diff_eq!(mid[0][0], mid[1][1], epsilon = 1e-15);
        // Trapezoid quadrature over +-15 standard deviations.
        let sd = m.readout_std();
        let (lo, hi, n) = (-1.0 - 15.0 * sd, -1.0 + 15.0 * sd, 200_000);
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * readout_density(lo + i as f64 * h, false, &m)
            })
            .sum::<f64>()
            * h;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn paravector_unitary_examples() {
        assert_eq!(paravector_unitary(0.0, 0.01), IDENTITY4);
        let v = paravector_unitary(PI / 2.0, 1.0);
        let s = ParaState { x: 0.3, y: 0.1, z: -0.4, p: 1.0 }.apply(&v);
        assert_abs_diff_eq!(s.x, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(s.z, 0.3, epsilon = 1e-15);
        assert_eq!(s.y, 0.1);
        assert_eq!(s.p, 1.0);
    }

    #[test]
    fn nonideal_reduces_to_measurement_dephasing() {
        let m = MeasurementModel::ideal(1.0, 0.01).unwrap();
        let f = paravector_measurement_nonideal(0.0, &m);
        let d = (-0.01f64 / 2.0).exp();
        let expect = [[d, 0.0, 0.0, 0.0], [0.0, d, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert!(max_abs_diff4(&f, &expect) < 1e-15);
    }

    #[test]
    fn nonideal_relaxation_without_measurement() {
        // A huge tau_m switches the readout coupling off.
        let t1 = 5.0;
        let m = MeasurementModel::new(1e12, 0.01, 1.0, t1, f64::INFINITY).unwrap();
        let s = ParaState { x: 0.0, y: 0.0, z: 0.6, p: 1.0 }.apply(&paravector_measurement_nonideal(0.0, &m));
        let decay = (-0.01f64 / t1).exp();
        assert_abs_diff_eq!(s.z / s.p, 0.6 * decay - (1.0 - decay), epsilon = 1e-12);
        assert_abs_diff_eq!(s.p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nonideal_matches_series() {
        for &(tau_m, dt) in &[(1.0, 0.01), (0.65, 0.01), (0.2, 0.01), (1.0, 0.05)] {
            for &t1 in &[50.0, 2.0, f64::INFINITY] {
                let m = MeasurementModel::new(tau_m, dt, 0.5, t1, 30.0).unwrap();
                for &r in &[-25.0, -3.0, -1.0, 0.0, 0.37, 1.0, 4.0, 25.0] {
                    let closed = paravector_measurement_nonideal(r, &m);
                    let series = series_exp(r, &m, 20);
                    assert!(max_abs_diff4(&closed, &series) < 1e-12, "r={r} tau_m={tau_m} t1={t1}");
                }
            }
        }
    }

    #[test]
    fn nonideal_degenerate_point() {
        // 2 r / tau_m == 1 / T1 makes the two eigenvalues coincide.
        let t1 = 10.0;
        let m = MeasurementModel::new(1.0, 0.01, 1.0, t1, f64::INFINITY).unwrap();
        let r = 0.5 / t1;
        for eps in [0.0, 1e-12, -1e-9, 1e-6] {
            let closed = paravector_measurement_nonideal(r + eps, &m);
            let series = series_exp(r + eps, &m, 20);
            assert!(max_abs_diff4(&closed, &series) < 1e-14);
        }
    }

    #[test]
    fn propagators_finite_over_readout_range() {
        for &tau_m in &[0.05, 0.65, 1.0] {
            let m = MeasurementModel::new(tau_m, 0.01, 0.5, 50.0, 30.0).unwrap();
            let rmax = 1.0 + 10.0 * m.readout_std();
            for r in [-rmax, rmax] {
                assert!(paravector_measurement_nonideal(r, &m).iter().flatten().all(|v| v.is_finite()));
                assert!(paravector_measurement_ideal(r, &m).iter().flatten().all(|v| v.is_finite()));
                assert!(povm_sqrt_rescaled(r, &m).iter().flatten().all(|v| v.is_finite()));
            }
        }
    }

    proptest! {
        #[test]
        fn rotation_is_special_orthogonal(omega in -50.0f64..50.0, dt in 1e-4f64..1.0) {
            let u = rotation_matrix(omega, dt);
            let ut = [[u[0][0], u[1][0]], [u[0][1], u[1][1]]];
            let p = mat2_mul(&ut, &u);
            prop_assert!((p[0][0] - 1.0).abs() < 1e-12 && (p[1][1] - 1.0).abs() < 1e-12);
            prop_assert!(p[0][1].abs() < 1e-12 && p[1][0].abs() < 1e-12);
            prop_assert!((u[0][0] * u[1][1] - u[0][1] * u[1][0] - 1.0).abs() < 1e-12);
        }

        #[test]
        fn unitary_matches_bloch_map(theta in -PI..PI, omega in -20.0f64..20.0, dt in 1e-3f64..0.5) {
            let psi = PureState { a0: theta.cos(), a1: theta.sin() };
            let via_amplitudes = psi.apply(&rotation_matrix(omega, dt)).to_para();
            let via_para = psi.to_para().apply(&paravector_unitary(omega, dt));
            for (a, b) in via_amplitudes.as_array().iter().zip(via_para.as_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn boost_matches_rescaled_povm(theta in -PI..PI, r in -30.0f64..30.0, tau_m in 0.05f64..2.0) {
            let m = MeasurementModel::ideal(tau_m, 0.01).unwrap();
            let psi = PureState { a0: theta.cos(), a1: theta.sin() };
            let via_amplitudes = psi.apply(&povm_sqrt_rescaled(r, &m)).to_para();
            let via_para = psi.to_para().apply(&paravector_measurement_ideal(r, &m));
            for (a, b) in via_amplitudes.as_array().iter().zip(via_para.as_array()) {
                prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn boosts_compose_additively(r1 in -20.0f64..20.0, r2 in -20.0f64..20.0) {
            let m = MeasurementModel::ideal(1.0, 0.01).unwrap();
            let prod = mat4_mul(&paravector_measurement_ideal(r1, &m), &paravector_measurement_ideal(r2, &m));
            let sum = paravector_measurement_ideal(r1 + r2, &m);
            prop_assert!(max_abs_diff4(&prod, &sum) < 1e-12);
        }

        #[test]
        fn ideal_step_preserves_purity(theta in -PI..PI, r in -30.0f64..30.0, omega in -20.0f64..20.0) {
            let m = MeasurementModel::ideal(0.5, 0.01).unwrap();
            let s = PureState { a0: theta.cos(), a1: theta.sin() }.to_para();
            let s = s.apply(&paravector_measurement_ideal(r, &m)).apply(&paravector_unitary(omega, m.dt()));
            prop_assert!((s.purity() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nonideal_block_equals_boost_without_relaxation(r in -40.0f64..40.0, tau_m in 0.05f64..2.0, eta in 0.1f64..1.0) {
            let m = MeasurementModel::new(tau_m, 0.01, eta, f64::INFINITY, 20.0).unwrap();
            let block = measurement_block_nonideal(r, &m);
            let boost = paravector_measurement_ideal(r, &m);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((block[i][j] - boost[i + 2][j + 2]).abs() <= 1e-12 * boost[i + 2][j + 2].abs().max(1.0));
                }
            }
        }
    }
}
