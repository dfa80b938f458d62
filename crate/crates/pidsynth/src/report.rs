//! Reports in two renderings: aligned text for people and TOML for tools.

use std::fmt::Write;

use pidsynth_core::analysis::{CertificateReport, SweepReport};
use pidsynth_core::lmi::PidGains;
use pidsynth_core::sdp::Bracket;
use pidsynth_core::sim::RmsSummary;
use serde::Serialize;

use crate::pipeline::{GainCheck, SynthesisResult, VertexSummary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PidRow {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl From<PidGains> for PidRow {
    fn from(p: PidGains) -> Self {
        Self { kp: p.kp, ki: p.ki, kd: p.kd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexRow {
    pub dm: f64,
    pub dd: f64,
    pub stable: bool,
    pub within_gamma: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abscissa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hinf_sweep: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hinf_hamiltonian: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_frequency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VertexRow {
    fn new(v: &VertexSummary, gamma: f64) -> Self {
        Self {
            dm: v.dm_frac,
            dd: v.dd_frac,
            stable: v.stable,
            within_gamma: v.within(gamma),
            abscissa: v.abscissa,
            hinf_sweep: v.hinf_sweep,
            hinf_hamiltonian: v.hinf_hamiltonian,
            peak_frequency: v.peak_frequency,
            note: v.hinf_error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateVertexRow {
    pub theta1_max: f64,
    pub schur_min: f64,
    pub lmi_ok: bool,
    pub stable: bool,
    pub hinf_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abscissa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hinf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateCheck {
    pub passed: bool,
    pub gamma: f64,
    pub psd_ok: bool,
    pub psd_margin: f64,
    pub w1_pd: bool,
    pub sparsity_ok: bool,
    pub sparsity_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<[f64; 6]>,
    pub vertices: Vec<CertificateVertexRow>,
}

impl From<&CertificateReport> for CertificateCheck {
    fn from(r: &CertificateReport) -> Self {
        Self {
            passed: r.passed,
            gamma: r.gamma,
            psd_ok: r.psd_ok,
            psd_margin: r.psd_margin,
            w1_pd: r.w1_pd,
            sparsity_ok: r.sparsity_ok,
            sparsity_norm: r.sparsity_norm,
            gain: r.gain.map(|k| k.0.into()),
            vertices: r
                .vertices
                .iter()
                .map(|v| CertificateVertexRow {
                    theta1_max: v.theta1_max,
                    schur_min: v.schur_min,
                    lmi_ok: v.lmi_ok,
                    stable: v.stable,
                    hinf_ok: v.hinf_ok,
                    abscissa: v.abscissa,
                    hinf: v.hinf,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub status: String,
    pub mu: f64,
    pub gamma: f64,
    pub dual_bound: f64,
    pub gap: f64,
    pub newton_steps: usize,
    pub gain: [f64; 6],
    pub pid: PidRow,
    pub w: Vec<Vec<f64>>,
    pub vertices: Vec<VertexRow>,
    pub certificate_check: CertificateCheck,
}

impl From<&SynthesisResult> for SynthReport {
    fn from(r: &SynthesisResult) -> Self {
        let full = r.certificate.full();
        Self {
            status: format!("{:?}", r.solve.status),
            mu: r.mu,
            gamma: r.gamma,
            dual_bound: r.solve.dual_bound,
            gap: r.solve.gap,
            newton_steps: r.solve.iterations,
            gain: r.gain.0.into(),
            pid: r.pid.into(),
            w: (0..7).map(|i| (0..7).map(|j| full[(i, j)]).collect()).collect(),
            vertices: r.vertices.iter().map(|v| VertexRow::new(v, r.gamma)).collect(),
            certificate_check: (&r.check).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub passed: bool,
    pub gamma: f64,
    pub pid: PidRow,
    pub vertices: Vec<VertexRow>,
}

impl From<&GainCheck> for GainReport {
    fn from(g: &GainCheck) -> Self {
        Self {
            passed: g.passed,
            gamma: g.gamma,
            pid: g.pid.into(),
            vertices: g.vertices.iter().map(|v| VertexRow::new(v, g.gamma)).collect(),
        }
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("report serializes")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6e}"))
}

fn vertex_table(out: &mut String, rows: &[VertexRow]) {
    let _ = writeln!(
        out,
        "  {:>6} {:>6} {:>14} {:>14} {:>14} {:>8}",
        "dm", "dd", "abscissa", "hinf(sweep)", "hinf(ham.)", "<=gamma"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "  {:>6.3} {:>6.3} {:>14} {:>14} {:>14} {:>8}",
            r.dm,
            r.dd,
            opt(r.abscissa),
            opt(r.hinf_sweep),
            opt(r.hinf_hamiltonian),
            if r.within_gamma { "yes" } else { "no" }
        );
        if let Some(n) = &r.note {
            let _ = writeln!(out, "         note: {n}");
        }
    }
}

fn certificate_text(out: &mut String, c: &CertificateCheck) {
    let _ = writeln!(out, "certificate check: {}", if c.passed { "PASS" } else { "FAIL" });
    let _ = writeln!(out, "  W psd      {} (margin {:.3e})", c.psd_ok, c.psd_margin);
    let _ = writeln!(out, "  W1 pd      {}", c.w1_pd);
    let _ = writeln!(out, "  sparsity   {} (residual {:.3e})", c.sparsity_ok, c.sparsity_norm);
    if let Some(k) = c.gain {
        let _ = writeln!(out, "  K          [{}]", k.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(", "));
    }
    let _ = writeln!(
        out,
        "  {:>3} {:>12} {:>12} {:>5} {:>6} {:>8}",
        "#", "theta1_max", "schur_min", "lmi", "stable", "hinf_ok"
    );
    for (i, v) in c.vertices.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {:>3} {:>12.3e} {:>12.3e} {:>5} {:>6} {:>8}",
            i + 1,
            v.theta1_max,
            v.schur_min,
            v.lmi_ok,
            v.stable,
            v.hinf_ok
        );
    }
}

pub fn synth_text(r: &SynthReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "status        {}", r.status);
    let _ = writeln!(s, "mu*           {:.10e}", r.mu);
    let _ = writeln!(s, "gamma*        {:.10}", r.gamma);
    let _ = writeln!(s, "dual bound    {:.10e}", r.dual_bound);
    let _ = writeln!(s, "relative gap  {:.3e}", r.gap);
    let _ = writeln!(s, "newton steps  {}", r.newton_steps);
    let _ = writeln!(s, "K*            [{}]", r.gain.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(", "));
    let _ = writeln!(s, "PID           kp = {:.6e}  ki = {:.6e}  kd = {:.6e}", r.pid.kp, r.pid.ki, r.pid.kd);
    let _ = writeln!(s, "W*");
    for row in &r.w {
        let _ = writeln!(s, "  {}", row.iter().map(|v| format!("{v:>13.5e}")).collect::<Vec<_>>().join(" "));
    }
    let _ = writeln!(s, "vertices (gamma = {:.6})", r.gamma);
    vertex_table(&mut s, &r.vertices);
    certificate_text(&mut s, &r.certificate_check);
    s
}

pub fn certificate_report_text(c: &CertificateCheck) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "gamma         {:.10}", c.gamma);
    certificate_text(&mut s, c);
    s
}

pub fn gain_text(g: &GainReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "PID           kp = {:.6e}  ki = {:.6e}  kd = {:.6e}", g.pid.kp, g.pid.ki, g.pid.kd);
    let _ = writeln!(s, "vertices (gamma = {:.6})", g.gamma);
    vertex_table(&mut s, &g.vertices);
    let _ = writeln!(s, "gain check: {}", if g.passed { "PASS" } else { "FAIL" });
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub name: String,
    pub true_dm: f64,
    pub true_dd: f64,
    pub noise_amp: f64,
    pub rms_e: f64,
    pub rms_edot: f64,
    pub rms_udotfb: f64,
    pub max_abs_e: f64,
    pub final_abs_e: f64,
}

impl ScenarioRow {
    pub fn rms(&self) -> RmsSummary {
        RmsSummary { rms_e: self.rms_e, rms_edot: self.rms_edot, rms_udotfb: self.rms_udotfb }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub pid: PidRow,
    pub scenarios: Vec<ScenarioRow>,
}

/// Rows of RMS error, error rate and feedback-rate, one per scenario.
pub fn simulation_text(r: &SimulationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "PID  kp = {:.6e}  ki = {:.6e}  kd = {:.6e}", r.pid.kp, r.pid.ki, r.pid.kd);
    let _ = writeln!(
        s,
        "{:<22} {:>14} {:>14} {:>14} {:>14}",
        "scenario", "rms_e [m]", "rms_edot [m/s]", "rms_udotfb", "max|e| [m]"
    );
    for row in &r.scenarios {
        let _ = writeln!(
            s,
            "{:<22} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            row.name, row.rms_e, row.rms_edot, row.rms_udotfb, row.max_abs_e
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub grid_n: usize,
    pub points: usize,
    pub all_stable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_vertex_hinf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_interior_hinf: Option<f64>,
    pub interior_within_vertex_bound: bool,
}

impl SweepSummary {
    pub fn new(grid_n: usize, r: &SweepReport) -> Self {
        Self {
            grid_n,
            points: r.points.len(),
            all_stable: r.all_stable,
            max_vertex_hinf: r.max_vertex_hinf,
            max_interior_hinf: r.max_interior_hinf,
            interior_within_vertex_bound: r.interior_within_vertex_bound,
        }
    }
}

pub fn sweep_text(s: &SweepSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "grid          {0} x {0} ({1} points)", s.grid_n, s.points);
    let _ = writeln!(out, "all stable    {}", s.all_stable);
    let _ = writeln!(out, "max vertex    {}", opt(s.max_vertex_hinf));
    let _ = writeln!(out, "max interior  {}", opt(s.max_interior_hinf));
    let _ = writeln!(out, "interior <= vertex bound  {}", s.interior_within_vertex_bound);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketReport {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    pub undecided: bool,
}

impl From<&Bracket> for BracketReport {
    fn from(b: &Bracket) -> Self {
        Self { lo: b.lo, hi: b.hi, steps: b.steps, undecided: b.undecided }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_values_are_omitted_from_toml() {
        let row = VertexRow {
            dm: -0.3,
            dd: 0.3,
            stable: false,
            within_gamma: false,
            abscissa: Some(0.0),
            hinf_sweep: None,
            hinf_hamiltonian: None,
            peak_frequency: None,
            note: Some("closed loop is not Hurwitz".into()),
        };
        let text = to_toml(&row);
        assert!(text.contains("abscissa = 0.0"));
        assert!(!text.contains("hinf_sweep"));
    }
}
