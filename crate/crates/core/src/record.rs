//! Readout records and their on-disk formats.
//!
//! Text format (canonical): `# key=value` header lines followed by one sample
//! per line.
//!
//! ```text
//! # n=3
//! # dt_us=0.01
//! # tau_m_us=1
//! # eta=1
//! # t1_us=inf
//! # t2_us=inf
//! # seed=7
//! -0.8125
//! 12.5
//! 3.25
//! ```
//!
//! An optional `# profile=<id>` line names the generating frequency profile.
//! Samples are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle is bit-exact.
//!
//! Binary format: a 64-byte header (`b"RBTRKREC"`, n as u64, dt, tau_m, eta,
//! t1, t2 as f64, seed as u64; all little-endian) followed by `n` little-endian
//! f64 samples. The profile id is not stored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::MeasurementModel;

pub const BINARY_MAGIC: &[u8; 8] = b"RBTRKREC";
const BINARY_HEADER_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutRecord {
    samples: Vec<f64>,
    model: MeasurementModel,
    seed: u64,
    profile_id: Option<String>,
}

impl ReadoutRecord {
    pub fn new(samples: Vec<f64>, model: MeasurementModel, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("readout record"));
        }
        if let Some(i) = samples.iter().position(|r| !r.is_finite()) {
            return Err(Error::invalid("samples", format!("sample {i} is not finite")));
        }
        Ok(Self { samples, model, seed, profile_id: None })
    }

    pub fn with_profile_id(mut self, id: impl Into<String>) -> Self {
        self.profile_id = Some(id.into());
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn model(&self) -> &MeasurementModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn profile_id(&self) -> Option<&str> {
        self.profile_id.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.model.dt()
    }

    /// Total duration `N dt` in microseconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.model.dt()
    }

    /// Sub-record of `len` samples starting at sample `start`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        let end = start.checked_add(len).filter(|&e| e <= self.samples.len() && len > 0).ok_or_else(|| {
            Error::invalid("window", format!("[{start}, {start}+{len}) outside record of {} samples", self.len()))
        })?;
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
            model: self.model,
            seed: self.seed,
            profile_id: self.profile_id.clone(),
        })
    }

    /// Same samples interpreted under a different model with the same bin width.
    pub fn with_model(&self, model: MeasurementModel) -> Result<Self> {
        if model.dt() != self.model.dt() {
            return Err(Error::invalid("model", "bin width differs from the record's"));
        }
        Ok(Self { model, ..self.clone() })
    }
}

fn fmt_time(t: f64) -> String {
    if t.is_infinite() {
        "inf".to_string()
    } else {
        format!("{t}")
    }
}

/// Write a record in the text format.
pub fn save_record(record: &ReadoutRecord, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_record(record, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_record<W: Write>(record: &ReadoutRecord, w: &mut W) -> Result<()> {
    let m = record.model();
    writeln!(w, "# n={}", record.len())?;
    writeln!(w, "# dt_us={}", m.dt())?;
    writeln!(w, "# tau_m_us={}", m.tau_m())?;
    writeln!(w, "# eta={}", m.eta())?;
    writeln!(w, "# t1_us={}", fmt_time(m.t1()))?;
    writeln!(w, "# t2_us={}", fmt_time(m.t2()))?;
    writeln!(w, "# seed={}", record.seed())?;
    if let Some(id) = record.profile_id() {
        writeln!(w, "# profile={id}")?;
    }
    for r in record.samples() {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

/// Write a record in the binary format.
pub fn save_record_binary(record: &ReadoutRecord, path: &Path) -> Result<()> {
    let m = record.model();
    let mut buf = Vec::with_capacity(BINARY_HEADER_LEN + 8 * record.len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(record.len() as u64).to_le_bytes());
    for v in [m.dt(), m.tau_m(), m.eta(), m.t1(), m.t2()] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&record.seed().to_le_bytes());
    debug_assert_eq!(buf.len(), BINARY_HEADER_LEN);
    for r in record.samples() {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Load a record, detecting the text or binary format.
pub fn load_record(path: &Path) -> Result<ReadoutRecord> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(&bytes, path)
    } else {
        parse_text(BufReader::new(bytes.as_slice()), path)
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedRecord { path: path.to_path_buf(), reason: reason.into() }
}

fn parse_binary(bytes: &[u8], path: &Path) -> Result<ReadoutRecord> {
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(malformed(path, "truncated binary header"));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().expect("8-byte slice") };
    let n = u64::from_le_bytes(word(1)) as usize;
    let f = |i| f64::from_le_bytes(word(i));
    let model = MeasurementModel::new(f(3), f(2), f(4), f(5), f(6)).map_err(|e| malformed(path, e.to_string()))?;
    let seed = u64::from_le_bytes(word(7));
    let body = &bytes[BINARY_HEADER_LEN..];
    if body.len() % 8 != 0 {
        return Err(malformed(path, "sample block is not a whole number of f64 values"));
    }
    if body.len() / 8 != n {
        return Err(Error::LengthMismatch { path: path.to_path_buf(), declared: n, found: body.len() / 8 });
    }
    let samples: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    finish(samples, model, seed, None, path)
}

#[derive(Default)]
struct Header {
    n: Option<usize>,
    dt: Option<f64>,
    tau_m: Option<f64>,
    eta: Option<f64>,
    t1: Option<f64>,
    t2: Option<f64>,
    seed: Option<u64>,
    profile: Option<String>,
}

fn parse_text<R: BufRead>(reader: R, path: &Path) -> Result<ReadoutRecord> {
    let mut h = Header::default();
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if !samples.is_empty() {
                return Err(malformed(path, format!("line {}: header after samples", lineno + 1)));
            }
            let Some((key, value)) = meta.trim().split_once('=') else {
                return Err(malformed(path, format!("line {}: expected `# key=value`", lineno + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| malformed(path, format!("line {}: invalid {what} `{value}`", lineno + 1));
            let float = || value.parse::<f64>().map_err(|_| bad(key));
            match key {
                "n" => h.n = Some(value.parse().map_err(|_| bad("n"))?),
                "dt_us" => h.dt = Some(float()?),
                "tau_m_us" => h.tau_m = Some(float()?),
                "eta" => h.eta = Some(float()?),
                "t1_us" => h.t1 = Some(float()?),
                "t2_us" => h.t2 = Some(float()?),
                "seed" => h.seed = Some(value.parse().map_err(|_| bad("seed"))?),
                "profile" => h.profile = Some(value.to_string()),
                _ => log::debug!("{}: ignoring header key `{key}`", path.display()),
            }
            continue;
        }
        let r: f64 =
            line.parse().map_err(|_| malformed(path, format!("line {}: `{line}` is not a number", lineno + 1)))?;
        if !r.is_finite() {
            return Err(malformed(path, format!("line {}: non-finite sample", lineno + 1)));
        }
        samples.push(r);
    }
    let need = |v: Option<f64>, k: &str| v.ok_or_else(|| malformed(path, format!("missing header key `{k}`")));
    let n = h.n.ok_or_else(|| malformed(path, "missing header key `n`"))?;
    let model = MeasurementModel::new(
        need(h.tau_m, "tau_m_us")?,
        need(h.dt, "dt_us")?,
        h.eta.unwrap_or(1.0),
        h.t1.unwrap_or(f64::INFINITY),
        h.t2.unwrap_or(f64::INFINITY),
    )
    .map_err(|e| malformed(path, e.to_string()))?;
    if samples.len() != n {
        return Err(Error::LengthMismatch { path: path.to_path_buf(), declared: n, found: samples.len() });
    }
    finish(samples, model, h.seed.unwrap_or(0), h.profile, path)
}

fn finish(
    samples: Vec<f64>,
    model: MeasurementModel,
    seed: u64,
    profile: Option<String>,
    path: &Path,
) -> Result<ReadoutRecord> {
    let rec = ReadoutRecord::new(samples, model, seed).map_err(|e| malformed(path, e.to_string()))?;
    Ok(match profile {
        Some(id) => rec.with_profile_id(id),
        None => rec,
    })
}
