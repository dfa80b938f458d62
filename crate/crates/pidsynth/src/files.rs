//! On-disk formats: certificate and gain files (TOML), traces and sweeps (CSV),
//! and optional gnuplot scripts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::SMatrix;
use pidsynth_core::analysis::SweepReport;
use pidsynth_core::lmi::{Certificate, PidGains};
use pidsynth_core::sim::Trace;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::CertificateOrigin;

pub const TRACE_HEADER: [&str; 9] = ["t", "r", "y", "e", "edot", "u_ff", "u_fb", "udot_fb", "w"];

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io { path: path.to_owned(), source }
}

fn parse_err(path: &Path, message: impl ToString) -> FileError {
    FileError::Parse { path: path.to_owned(), message: message.to_string() }
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FileError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Printed,
    Solver,
}

impl From<Origin> for CertificateOrigin {
    fn from(o: Origin) -> Self {
        match o {
            Origin::Printed => CertificateOrigin::Printed,
            Origin::Solver => CertificateOrigin::Solver,
        }
    }
}

/// `mu` and the full symmetric 7x7 `w`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    /// Selects the tolerance `verify` applies; hand-typed files default to printed.
    #[serde(default = "printed")]
    pub origin: Origin,
    pub mu: f64,
    pub w: Vec<Vec<f64>>,
}

fn printed() -> Origin {
    Origin::Printed
}

impl CertificateFile {
    pub fn from_certificate(cert: &Certificate, origin: Origin) -> Self {
        let full = cert.full();
        let w = (0..7).map(|i| (0..7).map(|j| full[(i, j)]).collect()).collect();
        Self { origin, mu: cert.mu, w }
    }

    pub fn certificate(&self) -> Result<Certificate, String> {
        if self.w.len() != 7 || self.w.iter().any(|r| r.len() != 7) {
            return Err("w must be a 7x7 array of rows".into());
        }
        if !self.mu.is_finite() || self.w.iter().flatten().any(|v| !v.is_finite()) {
            return Err("entries must be finite".into());
        }
        let full = SMatrix::<f64, 7, 7>::from_fn(|i, j| self.w[i][j]);
        let asym = (full - full.transpose()).abs().max();
        if asym > 1e-12 * full.abs().max() {
            return Err(format!("w is not symmetric (max asymmetry {asym:e})"));
        }
        Ok(Certificate::from_full(&full, self.mu))
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let f: Self = toml::from_str(&read_text(path)?).map_err(|e| parse_err(path, e))?;
        f.certificate().map_err(|e| parse_err(path, e))?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), FileError> {
        write_text(path, &toml::to_string(self).expect("certificate serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound to check the vertex norms against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl GainsFile {
    pub fn pid(&self) -> PidGains {
        PidGains { kp: self.kp, ki: self.ki, kd: self.kd }
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let f: Self = toml::from_str(&read_text(path)?).map_err(|e| parse_err(path, e))?;
        if ![f.kp, f.ki, f.kd].iter().all(|v| v.is_finite()) {
            return Err(parse_err(path, "gains must be finite"));
        }
        if f.gamma.is_some_and(|g| !(g.is_finite() && g > 0.0)) {
            return Err(parse_err(path, "gamma must be finite and positive"));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), FileError> {
        write_text(path, &toml::to_string(self).expect("gains serialize"))
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, FileError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|source| FileError::Csv { path: path.to_owned(), source })
}

pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<(), FileError> {
    let csv_err = |source| FileError::Csv { path: path.to_owned(), source };
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    let cols =
        [&trace.t, &trace.r, &trace.y, &trace.e, &trace.edot, &trace.u_ff, &trace.u_fb, &trace.udot_fb, &trace.w];
    for i in 0..trace.len() {
        w.write_record(cols.iter().map(|c| fmt_f64(c[i]))).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_sweep_csv(path: &Path, sweep: &SweepReport) -> Result<(), FileError> {
    let csv_err = |source| FileError::Csv { path: path.to_owned(), source };
    let mut w = csv_writer(path)?;
    w.write_record(["dm", "dd", "stable", "hinf", "abscissa", "vertex"]).map_err(csv_err)?;
    for p in &sweep.points {
        w.write_record([
            fmt_f64(p.dm_frac),
            fmt_f64(p.dd_frac),
            p.stable.to_string(),
            p.hinf.map(fmt_f64).unwrap_or_default(),
            fmt_f64(p.abscissa),
            p.is_vertex.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Rows of `(label, rms_e, rms_edot, rms_udotfb)`.
pub fn write_summary_csv(path: &Path, rows: &[(String, [f64; 3])]) -> Result<(), FileError> {
    let csv_err = |source| FileError::Csv { path: path.to_owned(), source };
    let mut w = csv_writer(path)?;
    w.write_record(["scenario", "rms_e", "rms_edot", "rms_udotfb"]).map_err(csv_err)?;
    for (label, v) in rows {
        w.write_record([label.clone(), fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2])]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn trace_gnuplot(csv_name: &str) -> String {
    format!(
        "set datafile separator ','
set key autotitle columnhead
set xlabel 't [s]'
set multiplot layout 2,1
set ylabel 'position [m]'
plot '{csv_name}' using 1:2 with lines, '' using 1:3 with lines
set ylabel 'error [m]'
plot '{csv_name}' using 1:4 with lines
unset multiplot
"
    )
}

pub fn sweep_gnuplot(csv_name: &str) -> String {
    format!(
        "set datafile separator ','
set xlabel 'dm / m'
set ylabel 'dd / d'
set cblabel 'H-infinity norm'
plot '{csv_name}' every ::1 using 1:2:4 with points pt 5 ps 2 palette notitle
"
    )
}

/// Makes sure `dir` exists and joins `name` onto it.
pub fn out_path(dir: &Path, name: &str) -> Result<PathBuf, FileError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.join(name))
}

/// Writes `text` to stdout, ignoring a closed pipe.
pub fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}
