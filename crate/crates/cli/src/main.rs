//! `rabitrack`: simulate readout records, estimate and track the Rabi
//! frequency, and run ensemble sweeps.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 when the input data or
//! configuration cannot be processed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rabitrack::spectral::{default_half_width, periodogram};
use rabitrack::{
    count_switches, fft_estimate, grid_evaluate, load_record, make_drift_profile, mhz_to_omega, omega_to_mhz,
    projective_fisher, projective_mle, run_sweep, save_record, simulate_projective, simulate_record, track,
    triangular_filter, window_estimate, FrequencyGrid, MeasurementModel, OmegaProfile, ParaState, PeakOptions,
    Posterior, SweepConfig, TrackerConfig, WindowSearch, WindowStart,
};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "rabitrack", version, about = "Rabi frequency estimation from continuous weak measurement records")]
struct Cli {
    /// TOML or JSON configuration (`sweep`, `track`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (`simulate`, `projective`); overrides `master_seed` for `sweep`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a readout record.
    Simulate(SimulateArgs),
    /// Estimate a constant frequency from a record.
    #[command(subcommand)]
    Estimate(EstimateCommand),
    /// Track a drifting frequency with a sliding window.
    Track(TrackArgs),
    /// Run an ensemble sweep over record durations and measurement times.
    Sweep,
    /// Simulate and estimate with periodic projective measurements.
    Projective(ProjectiveArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Measurement time tau_m (us).
    #[arg(long = "tau-m")]
    tau_m: f64,
    /// Bin width (us).
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Collection efficiency.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Energy relaxation time (us).
    #[arg(long)]
    t1: Option<f64>,
    /// Environmental dephasing time (us).
    #[arg(long)]
    t2: Option<f64>,
}

impl ModelArgs {
    fn model(&self) -> rabitrack::Result<MeasurementModel> {
        MeasurementModel::new(
            self.tau_m,
            self.dt,
            self.eta,
            self.t1.unwrap_or(f64::INFINITY),
            self.t2.unwrap_or(f64::INFINITY),
        )
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StartState {
    Ground,
    Excited,
    Plus,
    Mixed,
}

impl StartState {
    fn para(self) -> ParaState {
        match self {
            StartState::Ground => ParaState::GROUND,
            StartState::Excited => rabitrack::PureState::EXCITED.to_para(),
            StartState::Plus => rabitrack::PureState::PLUS.to_para(),
            StartState::Mixed => ParaState::MIXED,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Constant drive frequency (MHz); the drift center with `--drift-fraction`.
    #[arg(long, default_value_t = 1.0)]
    f: f64,
    /// Record duration (us).
    #[arg(long = "T")]
    duration: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "ground")]
    initial: StartState,
    /// Frequency profile JSON; replaces `--f`.
    #[arg(long, conflicts_with = "drift_fraction")]
    profile: Option<PathBuf>,
    /// Generate a random drift of this peak-to-peak fraction of `--f`.
    #[arg(long)]
    drift_fraction: Option<f64>,
    /// Shortest waypoint spacing of the generated drift (us).
    #[arg(long, default_value_t = 40.0)]
    drift_timescale: f64,
    /// Write the frequency profile used as JSON.
    #[arg(long)]
    profile_out: Option<PathBuf>,
    /// Write the binary record format instead of text.
    #[arg(long)]
    binary: bool,
}

#[derive(Subcommand, Debug)]
enum EstimateCommand {
    /// Maximum-likelihood estimate.
    Mle(MleArgs),
    /// Filtered-periodogram peak.
    Fft(FftArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AssumedStart {
    Ground,
    Plus,
    Mixed,
}

#[derive(Args, Debug)]
struct MleArgs {
    record: PathBuf,
    /// Search around the periodogram peak instead of the whole band.
    #[arg(long)]
    seed_from_fft: bool,
    /// Search band (MHz).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.0, 2.0])]
    band: Vec<f64>,
    /// State assumed at the start of the record.
    #[arg(long, value_enum, default_value = "ground")]
    initial: AssumedStart,
    /// Write the log-likelihood around the maximum as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FftArgs {
    record: PathBuf,
    /// Triangular filter half-width in bins.
    #[arg(long)]
    half_width: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.0, 2.0])]
    band: Vec<f64>,
    /// Write the filtered periodogram as CSV.
    #[arg(long)]
    spectrum: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrackArgs {
    record: PathBuf,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Profile JSON of the true frequency; reports RMS deviations on stderr.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProjectiveArgs {
    /// Drive frequency (MHz).
    #[arg(long, default_value_t = 0.25)]
    f: f64,
    /// Spacing between measurements (us).
    #[arg(long)]
    tau: f64,
    /// Number of measurements.
    #[arg(long)]
    n: usize,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<rabitrack::ReadoutRecord> {
    load_record(path).with_context(|| format!("loading {}", path.display()))
}

fn band_of(v: &[f64]) -> (f64, f64) {
    (v[0], v[1])
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let model = a.model.model()?;
    let seed = cli.seed.unwrap_or(0);
    let steps = (a.duration / a.model.dt).round();
    if !(steps >= 1.0) {
        bail!("duration {} us is shorter than one bin", a.duration);
    }
    let profile = match (&a.profile, a.drift_fraction) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            OmegaProfile::from_json(&text)?
        }
        (None, Some(frac)) => make_drift_profile(a.f, frac, a.drift_timescale, a.duration, seed)?,
        (None, None) => OmegaProfile::constant(a.f),
    };
    if let Some(path) = &a.profile_out {
        fs::write(path, profile.to_json()?)?;
    }
    let sim = simulate_record(&profile, &model, steps as usize, a.initial.para(), seed)?;
    match (&cli.out, a.binary) {
        (Some(path), true) => Ok(rabitrack::record::save_record_binary(&sim.record, path)?),
        (Some(path), false) => Ok(save_record(&sim.record, path)?),
        (None, true) => bail!(UsageError("--binary needs --out".into())),
        (None, false) => {
            let mut buf = Vec::new();
            rabitrack::record::write_record(&sim.record, &mut buf)?;
            std::io::stdout().write_all(&buf)?;
            Ok(())
        }
    }
}

fn estimate_mle(cli: &Cli, a: &MleArgs) -> Result<()> {
    let record = load(&a.record)?;
    let model = *record.model();
    let cfg = TrackerConfig {
        search_band_mhz: band_of(&a.band),
        window_start: match a.initial {
            AssumedStart::Ground => WindowStart::Ground,
            AssumedStart::Plus => WindowStart::Superposition,
            AssumedStart::Mixed => WindowStart::Mixed,
        },
        ..TrackerConfig::default()
    };
    cfg.validate()?;
    let search = if a.seed_from_fft { WindowSearch::Static } else { WindowSearch::Wide };
    let w = window_estimate(record.samples(), &model, search, &cfg)?;
    let e = &w.estimate;
    if !e.is_reliable() {
        log::warn!("estimate is not reliable (converged: {}, at boundary: {})", e.converged, e.at_boundary);
    }
    if let Some(path) = &a.curve {
        let half = if e.sigma_mhz.is_finite() { 10.0 * e.sigma_mhz } else { 10.0 / record.duration() };
        let grid = FrequencyGrid::uniform(e.f_ml_mhz - half, e.f_ml_mhz + half, 201)?;
        let lik = rabitrack::Likelihood::new(record.samples(), &model, cfg.window_start.state(&model))?;
        let curve = grid_evaluate(&Posterior { likelihood: &lik, prior: None }, &grid)?;
        fs::write(path, curve.to_csv())?;
    }
    let out = json!({
        "method": "mle",
        "f_mhz": e.f_ml_mhz,
        "sigma_mhz": e.sigma_mhz,
        "loglik_max": e.loglik_max,
        "converged": e.converged,
        "at_boundary": e.at_boundary,
        "evaluations": e.evaluations,
        "f_fft_mhz": w.f_fft_mhz,
        "fft_seeded": w.fft_seeded,
        "n_samples": record.len(),
        "duration_us": record.duration(),
    });
    emit(cli.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&out)?))
}

fn estimate_fft(cli: &Cli, a: &FftArgs) -> Result<()> {
    let record = load(&a.record)?;
    let model = record.model();
    let h = a.half_width.unwrap_or_else(|| default_half_width(record.duration(), model.tau_m()));
    let opts = PeakOptions { band: Some(band_of(&a.band)), ..PeakOptions::default() };
    let f = fft_estimate(record.samples(), model.dt(), h, &opts)?;
    if let Some(path) = &a.spectrum {
        let spec = triangular_filter(&periodogram(&record)?, h)?;
        fs::write(path, spec.to_csv())?;
    }
    let out = json!({
        "method": "fft",
        "f_mhz": f,
        "half_width_bins": h,
        "bin_width_mhz": 1.0 / record.duration(),
        "n_samples": record.len(),
        "duration_us": record.duration(),
    });
    emit(cli.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&out)?))
}

fn run_track(cli: &Cli, a: &TrackArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => TrackerConfig::load(path)?,
        None => TrackerConfig::default(),
    };
    if let Some(w) = a.window {
        cfg.window_us = w;
    }
    if let Some(s) = a.step {
        cfg.step_us = s;
    }
    let record = load(&a.record)?;
    let trace = track(&record, &cfg)?;
    if let Some(path) = &a.truth {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let profile = OmegaProfile::from_json(&text)?;
        let half = cfg.window_us / 2.0;
        let (ml, fft) = trace.rms_deviation(|t| profile.mean_freq(t - half, t + half))?;
        eprintln!("rms deviation: mle {ml:.5} MHz, fft {fft:.5} MHz");
    }
    emit(cli.out.as_deref(), &trace.to_csv())
}

fn sweep(cli: &Cli) -> Result<()> {
    let Some(path) = &cli.config else {
        bail!(UsageError("sweep needs --config".into()));
    };
    let mut cfg = SweepConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let result = run_sweep(&cfg)?;
    emit(cli.out.as_deref(), &result.to_csv())
}

fn projective(cli: &Cli, a: &ProjectiveArgs) -> Result<()> {
    let omega = mhz_to_omega(a.f);
    let seed = cli.seed.unwrap_or(0);
    let rec = simulate_projective(omega, a.tau, a.n, false, seed)?;
    let n = count_switches(&rec);
    let est = projective_mle(n, a.n, a.tau)?;
    let out = json!({
        "switches": n,
        "n_meas": a.n,
        "tau_us": a.tau,
        "omega_ml": est.omega_ml,
        "f_ml_mhz": omega_to_mhz(est.omega_ml),
        "sigma_omega": est.sigma,
        "sigma_mhz": omega_to_mhz(est.sigma),
        "fisher_omega": projective_fisher(a.n, a.tau),
        "at_boundary": est.at_boundary,
    });
    emit(cli.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&out)?))
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: &Cli) -> Result<()> {
    if cli.config.is_some() && !matches!(cli.command, Command::Sweep | Command::Track(_)) {
        bail!(UsageError("--config applies only to `sweep` and `track`".into()));
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(UsageError("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Estimate(EstimateCommand::Mle(a)) => estimate_mle(cli, a),
        Command::Estimate(EstimateCommand::Fft(a)) => estimate_fft(cli, a),
        Command::Track(a) => run_track(cli, a),
        Command::Sweep => sweep(cli),
        Command::Projective(a) => projective(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
