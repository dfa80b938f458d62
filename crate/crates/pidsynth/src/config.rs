//! TOML configuration with the maglev x-axis values as defaults.

use std::path::{Path, PathBuf};

use pidsynth_core::model::{SCurveSpec, SecondOrderPlant, UncertaintyBox, WeightSpec};
use pidsynth_core::sdp::SolverOptions;
use pidsynth_core::sim::{ControllerMode, SimConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable consulted when `--config` is absent.
pub const CONFIG_ENV: &str = "PIDSYNTH_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// Syntax and type errors; the message carries line and column.
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ConfigError {
    fn invalid(field: &'static str, reason: impl ToString) -> Self {
        Self::Invalid { field, reason: reason.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub m: f64,
    pub d: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = SecondOrderPlant::maglev_x_axis();
        Self { m: p.mass(), d: p.damping() }
    }
}

/// Fractions of the nominal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySection {
    pub dm_lo: f64,
    pub dm_hi: f64,
    pub dd_lo: f64,
    pub dd_hi: f64,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        Self { dm_lo: -0.3, dm_hi: 0.3, dd_lo: -0.3, dd_hi: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub r: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = WeightSpec::maglev_default();
        Self { q1: w.q1, q2: w.q2, q3: w.q3, r: w.r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScurveSection {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub rho0: [f64; 3],
    pub offset: f64,
}

impl Default for ScurveSection {
    fn default() -> Self {
        let s = SCurveSpec::maglev_default();
        Self { z1: s.z[0], z2: s.z[1], z3: s.z[2], rho0: s.rho0, offset: s.offset }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub mu_min: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub barrier_factor: f64,
    pub newton_tol: f64,
    /// Minimum eigenvalue margin phase 1 aims for before the main solve.
    pub strict_margin: f64,
    /// Relative width at which the bisection driver stops.
    pub bisect_rel_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            gap_tol: o.gap_tol,
            feas_tol: o.feas_tol,
            mu_min: o.mu_min,
            max_outer: o.max_outer,
            max_newton: o.max_newton,
            barrier_factor: o.barrier_factor,
            newton_tol: o.newton_tol,
            strict_margin: o.strict_margin,
            bisect_rel_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Continuous,
    Sampled,
}

impl From<Mode> for ControllerMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Continuous => ControllerMode::Continuous,
            Mode::Sampled => ControllerMode::Sampled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub duration: f64,
    pub dt: f64,
    /// Fractional mass and damping errors of the simulated plant.
    pub true_dm: f64,
    pub true_dd: f64,
    pub noise_amp: f64,
    pub seed: u64,
    pub mode: Mode,
    pub sample_hz: f64,
    pub deriv_filter_pole: f64,
    pub feedforward: bool,
    pub initial_integrator: f64,
    pub record_stride: usize,
    /// Plant error of the loaded runs in paired studies.
    pub load_dm: f64,
    pub load_dd: f64,
    /// Noise amplitude of the noisy runs in paired studies.
    pub study_noise_amp: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            duration: s.duration,
            dt: s.dt,
            true_dm: s.true_dm,
            true_dd: s.true_dd,
            noise_amp: s.force_noise_amp,
            seed: s.seed,
            mode: Mode::Continuous,
            sample_hz: s.sample_hz,
            deriv_filter_pole: s.deriv_filter_pole,
            feedforward: s.feedforward,
            initial_integrator: s.initial_integrator,
            record_stride: s.record_stride,
            load_dm: 0.3,
            load_dd: 0.3,
            study_noise_amp: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub gnuplot: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), gnuplot: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: PlantSection,
    pub uncertainty: UncertaintySection,
    pub weights: WeightsSection,
    pub scurve: ScurveSection,
    pub solver: SolverSection,
    pub sim: SimSection,
    pub output: OutputSection,
}

impl Config {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { origin: origin.to_owned(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// `explicit`, else the path in [`CONFIG_ENV`], else built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plant()?;
        self.uncertainty()?;
        self.weights()?;
        self.scurve()?;
        self.solver_options()?;
        if !(self.solver.bisect_rel_tol > 0.0 && self.solver.bisect_rel_tol < 1.0) {
            return Err(ConfigError::invalid("solver.bisect_rel_tol", "must lie in (0, 1)"));
        }
        self.sim_config(0.0, 0.0, false)?;
        Ok(())
    }

    pub fn plant(&self) -> Result<SecondOrderPlant, ConfigError> {
        let m_ok = self.plant.m.is_finite() && self.plant.m > 0.0;
        SecondOrderPlant::new(self.plant.m, self.plant.d)
            .map_err(|e| ConfigError::invalid(if m_ok { "plant.d" } else { "plant.m" }, e))
    }

    pub fn uncertainty(&self) -> Result<UncertaintyBox, ConfigError> {
        let u = &self.uncertainty;
        UncertaintyBox::new(u.dm_lo, u.dm_hi, u.dd_lo, u.dd_hi).map_err(|e| {
            let field = if [u.dm_lo, u.dm_hi].iter().all(|v| v.is_finite()) && u.dm_lo <= u.dm_hi && 1.0 + u.dm_lo > 0.0
            {
                "uncertainty.dd_lo"
            } else {
                "uncertainty.dm_lo"
            };
            ConfigError::invalid(field, e)
        })
    }

    pub fn weights(&self) -> Result<WeightSpec, ConfigError> {
        let w = &self.weights;
        for (field, v) in [("weights.q1", w.q1), ("weights.q2", w.q2), ("weights.q3", w.q3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(field, "must be finite and nonnegative"));
            }
        }
        WeightSpec::new(w.q1, w.q2, w.q3, w.r).map_err(|e| ConfigError::invalid("weights.r", e))
    }

    pub fn scurve(&self) -> Result<SCurveSpec, ConfigError> {
        let s = &self.scurve;
        if s.rho0.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::invalid("scurve.rho0", "entries must be finite"));
        }
        if !s.offset.is_finite() {
            return Err(ConfigError::invalid("scurve.offset", "must be finite"));
        }
        SCurveSpec::new([s.z1, s.z2, s.z3], s.rho0, s.offset).map_err(|e| ConfigError::invalid("scurve.z1", e))
    }

    pub fn solver_options(&self) -> Result<SolverOptions, ConfigError> {
        let s = &self.solver;
        let positive = [
            ("solver.gap_tol", s.gap_tol),
            ("solver.feas_tol", s.feas_tol),
            ("solver.mu_min", s.mu_min),
            ("solver.newton_tol", s.newton_tol),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(field, "must be finite and positive"));
            }
        }
        if !(s.barrier_factor.is_finite() && s.barrier_factor > 1.0) {
            return Err(ConfigError::invalid("solver.barrier_factor", "must exceed 1"));
        }
        if !(s.strict_margin.is_finite() && s.strict_margin >= 0.0) {
            return Err(ConfigError::invalid("solver.strict_margin", "must be finite and non-negative"));
        }
        if s.max_outer == 0 {
            return Err(ConfigError::invalid("solver.max_outer", "must be at least 1"));
        }
        if s.max_newton == 0 {
            return Err(ConfigError::invalid("solver.max_newton", "must be at least 1"));
        }
        Ok(SolverOptions {
            gap_tol: s.gap_tol,
            feas_tol: s.feas_tol,
            mu_min: s.mu_min,
            max_outer: s.max_outer,
            max_newton: s.max_newton,
            barrier_factor: s.barrier_factor,
            newton_tol: s.newton_tol,
            strict_margin: s.strict_margin,
            ..SolverOptions::default()
        })
    }

    /// Simulation settings with the plant error and noise overridden, as the
    /// paired studies need.
    pub fn sim_config(&self, true_dm: f64, true_dd: f64, noisy: bool) -> Result<SimConfig, ConfigError> {
        let s = &self.sim;
        let cfg = SimConfig {
            duration: s.duration,
            dt: s.dt,
            true_dm,
            true_dd,
            force_noise_amp: if noisy { s.noise_amp } else { 0.0 },
            seed: s.seed,
            controller_mode: s.mode.into(),
            sample_hz: s.sample_hz,
            deriv_filter_pole: s.deriv_filter_pole,
            feedforward: s.feedforward,
            initial_integrator: s.initial_integrator,
            record_stride: s.record_stride,
        };
        let positive = [
            ("sim.dt", s.dt),
            ("sim.duration", s.duration),
            ("sim.sample_hz", s.sample_hz),
            ("sim.deriv_filter_pole", s.deriv_filter_pole),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(field, "must be finite and positive"));
            }
        }
        let errors = [
            ("sim.true_dm", s.true_dm),
            ("sim.true_dd", s.true_dd),
            ("sim.load_dm", s.load_dm),
            ("sim.load_dd", s.load_dd),
        ];
        for (field, v) in errors {
            if !(v.is_finite() && v > -1.0) {
                return Err(ConfigError::invalid(field, "must be finite and above -1"));
            }
        }
        for (field, v) in [("sim.noise_amp", s.noise_amp), ("sim.study_noise_amp", s.study_noise_amp)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(field, "must be finite and nonnegative"));
            }
        }
        if !s.initial_integrator.is_finite() {
            return Err(ConfigError::invalid("sim.initial_integrator", "must be finite"));
        }
        if s.record_stride == 0 {
            return Err(ConfigError::invalid("sim.record_stride", "must be at least 1"));
        }
        cfg.validate().map_err(|e| ConfigError::invalid("sim.dt", e))?;
        Ok(cfg)
    }

    /// The configured scenario as written, noise included.
    pub fn scenario(&self) -> Result<SimConfig, ConfigError> {
        self.sim_config(self.sim.true_dm, self.sim.true_dd, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml_str("", "empty").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.plant.m, 1.0 / 400.0);
        assert_eq!([c.scurve.z1, c.scurve.z2, c.scurve.z3], [-125.0, -75.0, -15.0]);
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let c = Config::from_toml_str("[weights]\nq1 = 5.0\n", "t").unwrap();
        assert_eq!(c.weights.q1, 5.0);
        assert_eq!(c.weights.q2, 100.0);
    }

    #[test]
    fn errors_name_the_field() {
        let e = Config::from_toml_str("[plant]\nm = -1.0\n", "t").unwrap_err();
        assert!(e.to_string().starts_with("plant.m:"), "{e}");
        let e = Config::from_toml_str("[weights]\nr = 0.0\n", "t").unwrap_err();
        assert!(e.to_string().starts_with("weights.r:"), "{e}");
        let e = Config::from_toml_str("[scurve]\nz1 = 1.0\n", "t").unwrap_err();
        assert!(e.to_string().starts_with("scurve.z1:"), "{e}");
        let e = Config::from_toml_str("[uncertainty]\ndd_lo = 0.5\n", "t").unwrap_err();
        assert!(e.to_string().starts_with("uncertainty.dd_lo:"), "{e}");
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let e = Config::from_toml_str("[plant]\nm = 1.0\nd = \"x\"\n", "cfg.toml").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("cfg.toml") && msg.contains("line 3"), "{msg}");
        let e = Config::from_toml_str("[plant]\nmass = 1.0\n", "cfg.toml").unwrap_err();
        assert!(e.to_string().contains("mass"), "{e}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.sim.mode = Mode::Sampled;
        c.sim.noise_amp = 0.05;
        c.uncertainty.dm_hi = 0.123456789012345;
        let back = Config::from_toml_str(&c.to_toml_string(), "rt").unwrap();
        assert_eq!(back, c);
    }
}
