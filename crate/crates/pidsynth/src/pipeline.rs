//! model → lmi → sdp → analysis, as the commands run it.

use pidsynth_core::analysis::{
    closed_loop, closed_loop_abscissa, hinf_estimates, validate_certificate, CertificateReport, CheckTolerance,
    StateSpace, DEFAULT_HINF_TOL, HINF_SLACK,
};
use pidsynth_core::lmi::{extract_gain, to_pid, Certificate, GainVector, LmiError, PidGains};
use pidsynth_core::model::{polytope_vertices, AugmentedSystem, ModelError};
use pidsynth_core::sdp::{solve, SdpError, SdpProblem, SolveStatus};
use thiserror::Error;

use crate::config::{Config, ConfigError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("solver setup: {0:?}")]
    Sdp(SdpError),
    #[error("no certificate exists with mu >= mu_min = {mu_min:e}")]
    Infeasible { mu_min: f64 },
    #[error("solver stopped with status {0:?}")]
    SolverFailure(SolveStatus),
    #[error("gain extraction: {0}")]
    Gain(#[from] LmiError),
}

impl From<SdpError> for PipelineError {
    fn from(e: SdpError) -> Self {
        Self::Sdp(e)
    }
}

/// Closed-loop facts for one corner of the uncertainty box.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSummary {
    pub dm_frac: f64,
    pub dd_frac: f64,
    pub abscissa: Option<f64>,
    pub stable: bool,
    pub hinf_sweep: Option<f64>,
    pub hinf_hamiltonian: Option<f64>,
    pub peak_frequency: Option<f64>,
    /// Why the two-method norm is unavailable, if it is.
    pub hinf_error: Option<String>,
}

impl VertexSummary {
    /// Norm accepted under the two-method agreement rule.
    pub fn hinf(&self) -> Option<f64> {
        match (self.hinf_sweep, self.hinf_hamiltonian, &self.hinf_error) {
            (Some(_), Some(h), None) => Some(h),
            _ => None,
        }
    }

    pub fn within(&self, gamma: f64) -> bool {
        self.stable && self.hinf().is_some_and(|h| h <= gamma * (1.0 + HINF_SLACK))
    }
}

pub fn vertex_systems(cfg: &Config) -> Result<[AugmentedSystem; 4], PipelineError> {
    Ok(polytope_vertices(&cfg.plant()?, &cfg.uncertainty()?, &cfg.scurve()?, &cfg.weights()?)?)
}

pub fn analyze_vertices(cfg: &Config, k: &GainVector) -> Result<Vec<VertexSummary>, PipelineError> {
    let corners = cfg.uncertainty()?.corners();
    let systems = vertex_systems(cfg)?;
    Ok(corners.iter().zip(systems.iter()).map(|(&(dm, dd), aug)| analyze_one(dm, dd, aug, k)).collect())
}

fn analyze_one(dm_frac: f64, dd_frac: f64, aug: &AugmentedSystem, k: &GainVector) -> VertexSummary {
    let cl = closed_loop(aug, k);
    let abscissa = closed_loop_abscissa(&cl).ok();
    let stable = abscissa.is_some_and(|a| a < 0.0);
    let mut v = VertexSummary {
        dm_frac,
        dd_frac,
        abscissa,
        stable,
        hinf_sweep: None,
        hinf_hamiltonian: None,
        peak_frequency: None,
        hinf_error: None,
    };
    if !stable {
        v.hinf_error = Some("closed loop is not Hurwitz".into());
        return v;
    }
    match hinf_estimates(&StateSpace::from(&cl), DEFAULT_HINF_TOL) {
        Ok(est) => {
            v.hinf_sweep = Some(est.sweep);
            v.hinf_hamiltonian = Some(est.hamiltonian);
            v.peak_frequency = Some(est.peak_frequency);
            if est.relative_disagreement() > 10.0 * DEFAULT_HINF_TOL {
                v.hinf_error = Some(format!("methods disagree by {:e} relative", est.relative_disagreement()));
            }
        }
        Err(e) => {
            // The sweep alone is still informative when the bisection fails.
            let sys = StateSpace::from(&cl);
            if let Some((peak, w)) = pidsynth_core::analysis::hinf_sweep(&pidsynth_core::analysis::balance(&sys)) {
                v.hinf_sweep = Some(peak);
                v.peak_frequency = Some(w);
            }
            v.hinf_error = Some(format!("hamiltonian bisection: {e}"));
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub iterations: usize,
    pub gap: f64,
    pub dual_bound: f64,
    pub min_relative_margin: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub certificate: Certificate,
    pub mu: f64,
    pub gamma: f64,
    pub gain: GainVector,
    pub pid: PidGains,
    pub solve: SolveSummary,
    pub vertices: Vec<VertexSummary>,
    pub check: CertificateReport,
}

pub fn synthesize(cfg: &Config) -> Result<SynthesisResult, PipelineError> {
    let opts = cfg.solver_options()?;
    let systems = vertex_systems(cfg)?;
    let problem = SdpProblem::assemble(&systems, &opts)?;
    let sol = solve(&problem, &opts)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(PipelineError::Infeasible { mu_min: opts.mu_min }),
        other => return Err(PipelineError::SolverFailure(other)),
    }
    let certificate = problem.certificate(&sol.x);
    let gain = extract_gain(&certificate)?;
    let pid = to_pid(&gain)?;
    let vertices = analyze_vertices(cfg, &gain)?;
    let check = validate_certificate(&certificate, &systems, CheckTolerance::solver(opts.feas_tol));
    Ok(SynthesisResult {
        mu: certificate.mu,
        gamma: certificate.gamma(),
        certificate,
        gain,
        pid,
        solve: SolveSummary {
            status: sol.status,
            iterations: sol.iterations,
            gap: sol.gap,
            dual_bound: sol.dual_bound,
            min_relative_margin: sol.min_relative_margin,
            history: sol.history,
        },
        vertices,
        check,
    })
}

/// Which tolerance policy `verify` applies to a certificate file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateOrigin {
    /// Entries rounded to a few significant figures.
    Printed,
    /// Written by `synth` at full precision.
    Solver,
}

pub fn verify_certificate(
    cfg: &Config,
    cert: &Certificate,
    origin: CertificateOrigin,
) -> Result<CertificateReport, PipelineError> {
    let tol = match origin {
        CertificateOrigin::Printed => CheckTolerance::PRINT,
        CertificateOrigin::Solver => CheckTolerance::solver(cfg.solver_options()?.feas_tol),
    };
    Ok(validate_certificate(cert, &vertex_systems(cfg)?, tol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainCheck {
    pub pid: PidGains,
    pub gamma: f64,
    pub vertices: Vec<VertexSummary>,
    pub passed: bool,
}

pub fn verify_gains(cfg: &Config, pid: PidGains, gamma: f64) -> Result<GainCheck, PipelineError> {
    let vertices = analyze_vertices(cfg, &GainVector::from_pid(pid))?;
    let passed = vertices.iter().all(|v| v.within(gamma));
    Ok(GainCheck { pid, gamma, vertices, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn published() -> PidGains {
        PidGains { kp: 47.71, ki: 1664.71, kd: 0.50 }
    }

    #[test]
    fn published_gain_meets_its_bound() {
        let chk = verify_gains(&Config::default(), published(), 304.7995 * 1.001).unwrap();
        assert!(chk.passed, "{:?}", chk.vertices);
        for v in &chk.vertices {
            assert!(v.hinf_error.is_none());
        }
    }

    #[test]
    fn zero_gain_fails() {
        let chk = verify_gains(&Config::default(), PidGains { kp: 0.0, ki: 0.0, kd: 0.0 }, 1e9).unwrap();
        assert!(!chk.passed);
        assert!(chk.vertices.iter().all(|v| !v.stable));
    }

    #[test]
    fn printed_certificate_verifies() {
        let rep = verify_certificate(&Config::default(), &Certificate::published_maglev(), CertificateOrigin::Printed)
            .unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
