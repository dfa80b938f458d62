//! Subcommands and the exit-code contract.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use pidsynth_core::analysis::{uncertainty_sweep, DEFAULT_HINF_TOL};
use pidsynth_core::lmi::{GainVector, PidGains};
use pidsynth_core::model::{Wrench, WrenchAllocator, DEFAULT_ARM_LENGTH};
use pidsynth_core::sdp::{bisect_mu, SdpProblem};
use pidsynth_core::sim::{simulate, summarize, SimError};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::files::{self, CertificateFile, FileError, GainsFile, Origin};
use crate::pipeline::{self, PipelineError};
use crate::report::{self, ScenarioRow, SimulationReport, SweepSummary, SynthReport};

/// Process exit status. The numeric values are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Config = 1,
    /// No certificate exists, or a supplied one or a gain fails its checks.
    Infeasible = 2,
    SolverFailure = 3,
    Divergence = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("simulation: {0}")]
    Sim(SimError),
    #[error("{0}")]
    Usage(String),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::Sim(e)
    }
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            Self::Config(_) | Self::File(_) | Self::Usage(_) => Exit::Config,
            Self::Pipeline(PipelineError::Config(_)) | Self::Pipeline(PipelineError::Model(_)) => Exit::Config,
            Self::Pipeline(PipelineError::Infeasible { .. }) => Exit::Infeasible,
            Self::Pipeline(_) => Exit::SolverFailure,
            Self::Sim(SimError::Diverged { .. } | SimError::StepSizeViolation { .. }) => Exit::Divergence,
            Self::Sim(_) => Exit::Config,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pidsynth", version, about = "Robust PID-structured H-infinity synthesis for a maglev axis")]
pub struct Cli {
    /// TOML config; falls back to $PIDSYNTH_CONFIG, then built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write gnuplot scripts next to CSV files.
    #[arg(long, global = true)]
    pub gnuplot: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    /// The configured scenario only.
    Single,
    /// Unloaded plant against the loaded plant.
    Load,
    /// Noise-free against noisy.
    Noise,
    /// Both pairings, four runs.
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the optimal certificate and PID gains.
    Synth {
        /// Also bracket the optimum by bisection on mu.
        #[arg(long)]
        bisect: bool,
    },
    /// Check a certificate file or a gains file against the vertices.
    Verify {
        #[arg(long, value_name = "PATH", conflicts_with = "gains", required_unless_present = "gains")]
        certificate: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        gains: Option<PathBuf>,
        /// Bound for a gains file; overrides its `gamma` entry.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Closed-loop simulation; synthesizes gains when none are given.
    Simulate {
        #[arg(long, value_name = "PATH")]
        gains: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Study::Single)]
        study: Study,
    },
    /// Per-vertex H-infinity norms by both methods.
    Hinf {
        #[arg(long, value_name = "PATH")]
        gains: Option<PathBuf>,
    },
    /// Stability and H-infinity norm over a lattice of the uncertainty box.
    Sweep {
        #[arg(long, value_name = "PATH")]
        gains: Option<PathBuf>,
        #[arg(long, value_name = "N", default_value_t = 11)]
        grid: usize,
    },
    /// Split a body wrench into the eight local actuator forces.
    Allocate {
        /// `fx,fy,fz,tx,ty,tz`
        #[arg(long, required = true, allow_hyphen_values = true, value_delimiter = ',')]
        wrench: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_ARM_LENGTH)]
        arm_length: f64,
    },
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Config.code() } else { Exit::Ok.code() };
        }
    };
    match execute(&cli) {
        Ok(exit) => exit.code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit().code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Exit, CliError> {
    if let Command::Allocate { wrench, arm_length } = &cli.command {
        return allocate(wrench, *arm_length);
    }
    let cfg = Config::resolve(cli.config.as_deref())?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let gnuplot = cli.gnuplot || cfg.output.gnuplot;
    match &cli.command {
        Command::Synth { bisect } => synth(&cfg, &out, *bisect),
        Command::Verify { certificate, gains, gamma } => match (certificate, gains) {
            (Some(c), _) => verify_certificate(&cfg, &out, c),
            (None, Some(g)) => verify_gains(&cfg, &out, g, *gamma),
            (None, None) => Err(CliError::Usage("verify needs --certificate or --gains".into())),
        },
        Command::Simulate { gains, seed, study } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.sim.seed = *s;
            }
            simulate_cmd(&cfg, &out, gains.as_deref(), *study, gnuplot)
        }
        Command::Hinf { gains } => hinf(&cfg, &out, gains.as_deref()),
        Command::Sweep { gains, grid } => sweep(&cfg, &out, gains.as_deref(), *grid, gnuplot),
        Command::Allocate { .. } => unreachable!("handled above"),
    }
}

fn write_pair<T: serde::Serialize>(out: &Path, stem: &str, text: &str, value: &T) -> Result<(), CliError> {
    files::write_text(&files::out_path(out, &format!("{stem}.txt"))?, text)?;
    files::write_text(&files::out_path(out, &format!("{stem}.toml"))?, &report::to_toml(value))?;
    Ok(())
}

fn synth(cfg: &Config, out: &Path, bisect: bool) -> Result<Exit, CliError> {
    let started = Instant::now();
    let result = pipeline::synthesize(cfg)?;
    eprintln!("solved in {:.2} s", started.elapsed().as_secs_f64());
    let rep = SynthReport::from(&result);
    let mut text = report::synth_text(&rep);
    if bisect {
        let opts = cfg.solver_options()?;
        let problem = SdpProblem::assemble(&pipeline::vertex_systems(cfg)?, &opts).map_err(PipelineError::from)?;
        let b = bisect_mu(&problem, cfg.solver.bisect_rel_tol, &opts).map_err(PipelineError::from)?;
        text.push_str(&format!(
            "bisection     mu in [{:.10e}, {:.10e}] after {} steps{}\n",
            b.lo,
            b.hi,
            b.steps,
            if b.undecided { " (some steps undecided)" } else { "" }
        ));
        files::write_text(&files::out_path(out, "bisect.toml")?, &report::to_toml(&report::BracketReport::from(&b)))?;
    }
    write_pair(out, "synth", &text, &rep)?;
    CertificateFile::from_certificate(&result.certificate, Origin::Solver)
        .save(&files::out_path(out, "certificate.toml")?)?;
    GainsFile { kp: result.pid.kp, ki: result.pid.ki, kd: result.pid.kd, gamma: Some(result.gamma) }
        .save(&files::out_path(out, "gains.toml")?)?;
    files::emit(&text);
    Ok(Exit::Ok)
}

fn verify_certificate(cfg: &Config, out: &Path, path: &Path) -> Result<Exit, CliError> {
    let file = CertificateFile::load(path)?;
    let cert = file.certificate().map_err(|m| FileError::Parse { path: path.to_owned(), message: m })?;
    let rep = pipeline::verify_certificate(cfg, &cert, file.origin.into())?;
    let check = report::CertificateCheck::from(&rep);
    let text = report::certificate_report_text(&check);
    write_pair(out, "verify", &text, &check)?;
    files::emit(&text);
    Ok(if rep.passed { Exit::Ok } else { Exit::Infeasible })
}

fn verify_gains(cfg: &Config, out: &Path, path: &Path, gamma: Option<f64>) -> Result<Exit, CliError> {
    let file = GainsFile::load(path)?;
    let gamma = gamma.or(file.gamma).ok_or_else(|| CliError::Usage("a gains file needs `gamma` or --gamma".into()))?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(CliError::Usage("--gamma must be finite and positive".into()));
    }
    let chk = pipeline::verify_gains(cfg, file.pid(), gamma)?;
    let rep = report::GainReport::from(&chk);
    let text = report::gain_text(&rep);
    write_pair(out, "verify", &text, &rep)?;
    files::emit(&text);
    Ok(if chk.passed { Exit::Ok } else { Exit::Infeasible })
}

fn gains_or_synth(cfg: &Config, path: Option<&Path>) -> Result<PidGains, CliError> {
    match path {
        Some(p) => Ok(GainsFile::load(p)?.pid()),
        None => Ok(pipeline::synthesize(cfg)?.pid),
    }
}

/// `(name, true_dm, true_dd, noise_amp)` for each run of a study.
fn scenarios(cfg: &Config, study: Study) -> Vec<(&'static str, f64, f64, f64)> {
    let s = &cfg.sim;
    match study {
        Study::Single => vec![("configured", s.true_dm, s.true_dd, s.noise_amp)],
        Study::Load => vec![("no-load", 0.0, 0.0, s.noise_amp), ("load", s.load_dm, s.load_dd, s.noise_amp)],
        Study::Noise => {
            vec![("noise-free", s.true_dm, s.true_dd, 0.0), ("noisy", s.true_dm, s.true_dd, s.study_noise_amp)]
        }
        Study::Table => vec![
            ("no-load/noise-free", 0.0, 0.0, 0.0),
            ("load/noise-free", s.load_dm, s.load_dd, 0.0),
            ("no-load/noisy", 0.0, 0.0, s.study_noise_amp),
            ("load/noisy", s.load_dm, s.load_dd, s.study_noise_amp),
        ],
    }
}

fn simulate_cmd(cfg: &Config, out: &Path, gains: Option<&Path>, study: Study, gnuplot: bool) -> Result<Exit, CliError> {
    let pid = gains_or_synth(cfg, gains)?;
    let plant = cfg.plant()?;
    let spec = cfg.scurve()?;
    let mut rows = Vec::new();
    for (name, dm, dd, noise) in scenarios(cfg, study) {
        let mut sim_cfg = cfg.sim_config(dm, dd, true)?;
        sim_cfg.force_noise_amp = noise;
        let trace = simulate(&plant, &sim_cfg, &spec, pid)?;
        let stem = format!("trace_{}", name.replace('/', "_"));
        files::write_trace_csv(&files::out_path(out, &format!("{stem}.csv"))?, &trace)?;
        if gnuplot {
            files::write_text(
                &files::out_path(out, &format!("{stem}.gp"))?,
                &files::trace_gnuplot(&format!("{stem}.csv")),
            )?;
        }
        let rms = summarize(&trace, cfg.sim.deriv_filter_pole)?;
        rows.push(ScenarioRow {
            name: name.to_owned(),
            true_dm: dm,
            true_dd: dd,
            noise_amp: noise,
            rms_e: rms.rms_e,
            rms_edot: rms.rms_edot,
            rms_udotfb: rms.rms_udotfb,
            max_abs_e: trace.max_abs_error(),
            final_abs_e: trace.e.last().map_or(0.0, |e| e.abs()),
        });
    }
    let rep = SimulationReport { pid: pid.into(), scenarios: rows };
    let text = report::simulation_text(&rep);
    let summary: Vec<(String, [f64; 3])> =
        rep.scenarios.iter().map(|r| (r.name.clone(), [r.rms_e, r.rms_edot, r.rms_udotfb])).collect();
    files::write_summary_csv(&files::out_path(out, "summary.csv")?, &summary)?;
    write_pair(out, "simulate", &text, &rep)?;
    files::emit(&text);
    Ok(Exit::Ok)
}

fn hinf(cfg: &Config, out: &Path, gains: Option<&Path>) -> Result<Exit, CliError> {
    let (pid, gamma) = match gains {
        Some(p) => {
            let f = GainsFile::load(p)?;
            (f.pid(), f.gamma)
        }
        None => {
            let r = pipeline::synthesize(cfg)?;
            (r.pid, Some(r.gamma))
        }
    };
    let vertices = pipeline::analyze_vertices(cfg, &GainVector::from_pid(pid))?;
    let chk = pipeline::GainCheck {
        pid,
        gamma: gamma.unwrap_or(f64::INFINITY),
        passed: vertices.iter().all(|v| v.hinf().is_some()),
        vertices,
    };
    let rep = report::GainReport::from(&chk);
    let text = report::gain_text(&rep);
    write_pair(out, "hinf", &text, &rep)?;
    files::emit(&text);
    Ok(if chk.vertices.iter().any(|v| !v.stable) {
        Exit::Infeasible
    } else if chk.passed {
        Exit::Ok
    } else {
        Exit::SolverFailure
    })
}

fn sweep(cfg: &Config, out: &Path, gains: Option<&Path>, grid: usize, gnuplot: bool) -> Result<Exit, CliError> {
    if grid < 2 {
        return Err(CliError::Usage(format!("--grid must be at least 2, got {grid}")));
    }
    let pid = gains_or_synth(cfg, gains)?;
    let k = GainVector::from_pid(pid);
    let rep = uncertainty_sweep(
        &cfg.plant()?,
        &cfg.uncertainty()?,
        &cfg.scurve()?,
        &cfg.weights()?,
        &k,
        grid,
        DEFAULT_HINF_TOL,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    files::write_sweep_csv(&files::out_path(out, "sweep.csv")?, &rep)?;
    if gnuplot {
        files::write_text(&files::out_path(out, "sweep.gp")?, &files::sweep_gnuplot("sweep.csv"))?;
    }
    let summary = SweepSummary::new(grid, &rep);
    let text = report::sweep_text(&summary);
    write_pair(out, "sweep", &text, &summary)?;
    files::emit(&text);
    Ok(Exit::Ok)
}

fn allocate(wrench: &[f64], arm_length: f64) -> Result<Exit, CliError> {
    if wrench.len() != 6 || wrench.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("--wrench takes six finite comma-separated values".into()));
    }
    let alloc = WrenchAllocator::new(arm_length).map_err(|e| CliError::Usage(e.to_string()))?;
    let fg = Wrench::from_column_slice(wrench);
    let fl = alloc.allocate_forces(&fg).map_err(|e| CliError::Usage(e.to_string()))?;
    let residual = (alloc.compose_wrench(&fl) - fg).norm();
    let mut text = String::new();
    for (i, f) in fl.iter().enumerate() {
        text.push_str(&format!("f{} = {}\n", i + 1, files::fmt_f64(*f)));
    }
    text.push_str(&format!("residual = {}\n", files::fmt_f64(residual)));
    files::emit(&text);
    Ok(Exit::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(
            [Exit::Ok, Exit::Config, Exit::Infeasible, Exit::SolverFailure, Exit::Divergence].map(Exit::code),
            [0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn sim_blowups_map_to_divergence() {
        let e = CliError::Sim(SimError::Diverged { time: 1.0 });
        assert_eq!(e.exit(), Exit::Divergence);
        let e = CliError::Sim(SimError::StepSizeViolation { dt: 1e-5, max_stable_dt: 1e-9 });
        assert_eq!(e.exit(), Exit::Divergence);
    }

    #[test]
    fn grid_of_one_is_rejected() {
        let code = run(["pidsynth", "--out", "/nonexistent-dir-never-written", "sweep", "--grid", "1"]);
        assert_eq!(code, Exit::Config.code());
    }

    #[test]
    fn negative_wrench_components_parse() {
        let cli = Cli::try_parse_from(["pidsynth", "allocate", "--wrench", "-1,0,0,0,0,-2"]).unwrap();
        match cli.command {
            Command::Allocate { wrench, arm_length } => {
                assert_eq!(wrench, vec![-1.0, 0.0, 0.0, 0.0, 0.0, -2.0]);
                assert_eq!(arm_length, DEFAULT_ARM_LENGTH);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
