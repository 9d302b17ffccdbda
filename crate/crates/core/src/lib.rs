//! Simulation and frequency estimation for a continuously measured, driven qubit.
//!
//! The readout record of a weakly measured qubit under a Rabi drive carries
//! the drive frequency. This crate simulates such records (ideal or with
//! finite efficiency, T1 and T2) and recovers the frequency by maximum
//! likelihood, by the periodogram peak, or by sliding-window tracking when it
//! drifts. Frequencies at every public boundary are in MHz and times in
//! microseconds.

pub mod error;
pub mod experiment;
pub mod mle;
pub mod model;
pub mod profile;
pub mod projective;
pub mod record;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod tracker;

pub use error::{Error, Result};
pub use experiment::{rms_error, run_sweep, CellResult, EstimatorChoice, SweepConfig, SweepResult};
pub use mle::{
    estimate_in_band, grid_evaluate, newton_polish, refine_and_fit, EstimateResult, FrequencyGrid, GaussianPrior,
    InitialState, Likelihood, LikelihoodCurve, Posterior, Propagation,
};
pub use model::{mhz_to_omega, omega_to_mhz, MeasurementModel, ParaState, PureState};
pub use profile::{make_drift_profile, OmegaProfile};
pub use projective::{
    count_switches, projective_fisher, projective_loglike, projective_mle, simulate_projective, ProjectiveEstimate,
    ProjectiveRecord,
};
pub use record::{load_record, save_record, ReadoutRecord};
pub use simulate::{simulate_record, Simulation};
pub use spectral::{fft_estimate, peak_estimate, periodogram, triangular_filter, PeakOptions, Spectrum};
pub use tracker::{track, window_estimate, DriftTrace, SeedMode, TracePoint, TrackerConfig, WindowSearch, WindowStart};
