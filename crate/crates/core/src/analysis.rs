// SPDX-License-Identifier: Apache-2.0

//! Closed-loop construction, stability, H-infinity norm, Riccati residuals
//! and certificate validation.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Complex, DMatrix, Matrix4x6, Matrix6, Schur};
#[allow(unused_imports)]
use num_traits::Float;

use crate::lmi::{build_fqr, extract_gain, schur_lmi, sparsity_residual, theta, Certificate, GainVector};
use crate::model::{
    build_augmented, AugmentedSystem, ModelError, SCurveSpec, SecondOrderPlant, UncertaintyBox, WeightSpec,
};

/// Frequency grid of the sweep method: log-spaced over `[1e-3, 1e6]` rad/s.
pub const SWEEP_POINTS: usize = 400;
pub const SWEEP_LO: f64 = 1e-3;
pub const SWEEP_HI: f64 = 1e6;
/// Hamiltonian eigenvalues with `|Re| ≤ IMAG_AXIS_TOL·‖H‖` count as imaginary.
pub const IMAG_AXIS_TOL: f64 = 1e-8;
/// Default relative accuracy for [`hinf_norm`].
pub const DEFAULT_HINF_TOL: f64 = 1e-6;
/// Slack allowed on the H-infinity bound in certificate reports.
pub const HINF_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    NotSquare,
    EigenFailure,
    Unstable {
        abscissa: f64,
    },
    /// The sweep and Hamiltonian values differ by more than `10·tol`.
    MethodDisagreement {
        sweep: f64,
        hamiltonian: f64,
    },
    NotSymmetric {
        asymmetry: f64,
    },
    GridTooSmall(usize),
    Model(ModelError),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotSquare => write!(f, "matrix is not square"),
            Self::EigenFailure => write!(f, "eigenvalue iteration did not converge"),
            Self::Unstable { abscissa } => write!(f, "system is not Hurwitz (spectral abscissa {abscissa:e})"),
            Self::MethodDisagreement { sweep, hamiltonian } => {
                write!(f, "frequency sweep ({sweep:e}) and Hamiltonian bisection ({hamiltonian:e}) disagree")
            }
            Self::NotSymmetric { asymmetry } => write!(f, "matrix is not symmetric (max asymmetry {asymmetry:e})"),
            Self::GridTooSmall(n) => write!(f, "grid size must be at least 2, got {n}"),
            Self::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for AnalysisError {}

impl From<ModelError> for AnalysisError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

/// `x' = Acl x + B1 w`, `z = Ccl x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub acl: Matrix6<f64>,
    pub b1: Matrix6<f64>,
    pub ccl: Matrix4x6<f64>,
}

pub fn closed_loop(aug: &AugmentedSystem, k: &GainVector) -> ClosedLoop {
    ClosedLoop { acl: aug.a - aug.b2 * k.0, b1: aug.b1, ccl: aug.c - aug.d * k.0 }
}

/// Strictly proper realization `(A, B, C)` of any size.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl From<&ClosedLoop> for StateSpace {
    fn from(cl: &ClosedLoop) -> Self {
        Self {
            a: DMatrix::from_column_slice(6, 6, cl.acl.as_slice()),
            b: DMatrix::from_column_slice(6, 6, cl.b1.as_slice()),
            c: DMatrix::from_column_slice(4, 6, cl.ccl.as_slice()),
        }
    }
}

/// Eigenvalues of a real square matrix through its real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, AnalysisError> {
    if !m.is_square() {
        return Err(AnalysisError::NotSquare);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::EigenFailure);
    }
    // The QR iteration occasionally stalls; the transpose and a shifted copy
    // share the spectrum but take different iteration paths.
    let shift = 0.618 * m.norm() / (m.nrows() as f64).sqrt();
    let id = DMatrix::identity(m.nrows(), m.ncols());
    for (candidate, s) in [(m.clone(), 0.0), (m.transpose(), 0.0), (m + &id * shift, shift), (m - &id * shift, -shift)]
    {
        if let Some(schur) = Schur::try_new(candidate, f64::EPSILON, 100_000) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| z - s).collect());
        }
    }
    Err(AnalysisError::EigenFailure)
}

/// Largest real part of the eigenvalues.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64, AnalysisError> {
    Ok(eigenvalues(m)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

pub fn closed_loop_abscissa(cl: &ClosedLoop) -> Result<f64, AnalysisError> {
    spectral_abscissa(&DMatrix::from_column_slice(6, 6, cl.acl.as_slice()))
}

/// Diagonal state scaling by powers of two equalizing the off-diagonal row
/// and column sums of `[[A, B], [C, 0]]`. The transfer function is unchanged.
pub fn balance(sys: &StateSpace) -> StateSpace {
    let n = sys.a.nrows();
    let mut out = sys.clone();
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let col: f64 = (0..n).filter(|&j| j != i).map(|j| out.a[(j, i)].abs()).sum::<f64>()
                + out.c.column(i).iter().map(|v| v.abs()).sum::<f64>();
            let row: f64 = (0..n).filter(|&j| j != i).map(|j| out.a[(i, j)].abs()).sum::<f64>()
                + out.b.row(i).iter().map(|v| v.abs()).sum::<f64>();
            if col == 0.0 || row == 0.0 {
                continue;
            }
            let e = (0.5 * (row / col).log2()).round();
            if e == 0.0 || !e.is_finite() {
                continue;
            }
            let f = 2f64.powi(e as i32);
            if col * f + row / f >= 0.95 * (col + row) {
                continue;
            }
            out.a.column_mut(i).scale_mut(f);
            out.c.column_mut(i).scale_mut(f);
            out.a.row_mut(i).scale_mut(1.0 / f);
            out.b.row_mut(i).scale_mut(1.0 / f);
            changed = true;
        }
        if !changed {
            break;
        }
    }
    out
}

/// Largest singular value of `C (jωI - A)⁻¹ B`.
pub fn sigma_max(sys: &StateSpace, omega: f64) -> Option<f64> {
    let n = sys.a.nrows();
    let mut m = sys.a.map(|v| Complex::new(-v, 0.0));
    for i in 0..n {
        m[(i, i)] += Complex::new(0.0, omega);
    }
    let rhs = sys.b.map(|v| Complex::new(v, 0.0));
    let x = m.lu().solve(&rhs)?;
    let g = sys.c.map(|v| Complex::new(v, 0.0)) * x;
    let sv = g.singular_values();
    let s = sv.iter().copied().fold(0.0f64, f64::max);
    s.is_finite().then_some(s)
}

/// Peak of the frequency response over the documented grid plus ω = 0,
/// refined by golden-section search in log frequency around the best
/// grid point.
pub fn hinf_sweep(sys: &StateSpace) -> Option<(f64, f64)> {
    let step = (SWEEP_HI / SWEEP_LO).log10() / (SWEEP_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SWEEP_POINTS).map(|k| SWEEP_LO * 10f64.powf(step * k as f64)).collect();
    let mut best = (sigma_max(sys, 0.0)?, 0.0);
    let mut best_idx = None;
    for (k, &w) in grid.iter().enumerate() {
        let s = sigma_max(sys, w)?;
        if s > best.0 {
            best = (s, w);
            best_idx = Some(k);
        }
    }
    let (lo, hi) = match best_idx {
        Some(k) => (grid[k.saturating_sub(1)].log10(), grid[(k + 1).min(SWEEP_POINTS - 1)].log10()),
        None => (SWEEP_LO.log10() - 3.0, grid[1].log10()),
    };
    let eval = |lw: f64| sigma_max(sys, 10f64.powf(lw)).unwrap_or(0.0);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d);
        }
    }
    for (s, lw) in [(fc, c), (fd, d)] {
        if s > best.0 {
            best = (s, 10f64.powf(lw));
        }
    }
    Some(best)
}

/// Whether `[[A, BBᵀ/γ], [-CᵀC/γ, -Aᵀ]]` has an eigenvalue on the
/// imaginary axis (similar to the usual γ⁻² form, better scaled).
pub fn hamiltonian_has_imaginary_eigenvalue(sys: &StateSpace, gamma: f64) -> Result<bool, AnalysisError> {
    let n = sys.a.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    h.view_mut((0, n), (n, n)).copy_from(&(&sys.b * sys.b.transpose() / gamma));
    h.view_mut((n, 0), (n, n)).copy_from(&(-(sys.c.transpose() * &sys.c) / gamma));
    h.view_mut((n, n), (n, n)).copy_from(&(-sys.a.transpose()));
    let norm = h.norm();
    Ok(eigenvalues(&h)?.iter().any(|z| z.re.abs() <= IMAG_AXIS_TOL * norm))
}

/// γ-bisection on the Hamiltonian test, to relative width `tol`.
pub fn hinf_hamiltonian(sys: &StateSpace, lower: f64, tol: f64) -> Result<f64, AnalysisError> {
    let mut lo = lower.max(f64::MIN_POSITIVE);
    let mut hi = lo * 2.0;
    while hamiltonian_has_imaginary_eigenvalue(sys, hi)? {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(AnalysisError::EigenFailure);
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if hamiltonian_has_imaginary_eigenvalue(sys, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Both H-infinity estimates for a Hurwitz system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HinfEstimate {
    pub sweep: f64,
    pub peak_frequency: f64,
    pub hamiltonian: f64,
}

impl HinfEstimate {
    pub fn relative_disagreement(&self) -> f64 {
        (self.sweep - self.hamiltonian).abs() / self.hamiltonian.abs().max(f64::MIN_POSITIVE)
    }
}

/// Both estimates without the agreement check.
pub fn hinf_estimates(sys: &StateSpace, tol: f64) -> Result<HinfEstimate, AnalysisError> {
    let abscissa = spectral_abscissa(&sys.a)?;
    if !(abscissa < 0.0) {
        return Err(AnalysisError::Unstable { abscissa });
    }
    let bal = balance(sys);
    let (sweep, peak_frequency) = hinf_sweep(&bal).ok_or(AnalysisError::EigenFailure)?;
    if sweep == 0.0 {
        return Ok(HinfEstimate { sweep, peak_frequency, hamiltonian: 0.0 });
    }
    // Start the bracket below the sweep value so the bisection does its own work.
    let hamiltonian = hinf_hamiltonian(&bal, sweep * 0.5, tol * 0.1)?;
    Ok(HinfEstimate { sweep, peak_frequency, hamiltonian })
}

/// H-infinity norm of a Hurwitz system, computed by the sweep and by
/// Hamiltonian bisection; returns the bisection value once the two agree
/// within `10·tol`.
pub fn hinf_norm_ss(sys: &StateSpace, tol: f64) -> Result<f64, AnalysisError> {
    let est = hinf_estimates(sys, tol)?;
    if est.relative_disagreement() > 10.0 * tol {
        return Err(AnalysisError::MethodDisagreement { sweep: est.sweep, hamiltonian: est.hamiltonian });
    }
    Ok(est.hamiltonian)
}

pub fn hinf_norm(cl: &ClosedLoop, tol: f64) -> Result<f64, AnalysisError> {
    hinf_norm_ss(&StateSpace::from(cl), tol)
}

/// Largest eigenvalue of the bounded-real Riccati expression, with the size
/// of its largest term for relative comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiResidual {
    pub lambda_max: f64,
    pub scale: f64,
}

impl RiccatiResidual {
    pub fn relative(&self) -> f64 {
        self.lambda_max / self.scale.max(f64::MIN_POSITIVE)
    }
}

/// `λ_max((A-B2K)ᵀP + P(A-B2K) + γ⁻² P B1 B1ᵀ P + (C-DK)ᵀ(C-DK))`.
pub fn riccati_residual(
    aug: &AugmentedSystem,
    k: &GainVector,
    p: &Matrix6<f64>,
    gamma: f64,
) -> Result<RiccatiResidual, AnalysisError> {
    let asym = (p - p.transpose()).abs().max();
    if asym > 1e-12 * p.abs().max().max(f64::MIN_POSITIVE) {
        return Err(AnalysisError::NotSymmetric { asymmetry: asym });
    }
    let cl = closed_loop(aug, k);
    let pa = p * cl.acl;
    let pb = p * cl.b1;
    let terms = [pa.transpose() + pa, pb * pb.transpose() / (gamma * gamma), cl.ccl.transpose() * cl.ccl];
    let scale = terms.iter().map(|t| t.norm()).fold(0.0, f64::max).max(pa.norm());
    let sum = terms[0] + terms[1] + terms[2];
    let lambda_max = ((sum + sum.transpose()) * 0.5).symmetric_eigenvalues().max();
    Ok(RiccatiResidual { lambda_max, scale })
}

/// Which tolerance policy a certificate check applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckTolerance {
    /// Eigenvalue slack relative to each block's spectral norm.
    pub eig_rel: f64,
    /// Relative slack on `‖H_i‖∞ ≤ γ`.
    pub hinf_rel: f64,
    pub hinf_tol: f64,
}

impl CheckTolerance {
    /// For certificates typed in from three-significant-figure values.
    pub const PRINT: Self = Self { eig_rel: 1e-2, hinf_rel: HINF_SLACK, hinf_tol: DEFAULT_HINF_TOL };

    /// For certificates produced by the solver with feasibility tolerance `feas_tol`.
    pub fn solver(feas_tol: f64) -> Self {
        Self { eig_rel: feas_tol, hinf_rel: HINF_SLACK, hinf_tol: DEFAULT_HINF_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexCheck {
    /// `λ_max(Θ₁)` relative to the spectral norm of the vertex Schur block.
    pub theta1_max: f64,
    /// `λ_min` of the Schur block relative to its spectral norm.
    pub schur_min: f64,
    pub lmi_ok: bool,
    pub abscissa: Option<f64>,
    pub hinf: Option<f64>,
    pub stable: bool,
    pub hinf_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// `λ_min(W)` relative to `‖W‖`.
    pub psd_margin: f64,
    pub psd_ok: bool,
    pub w1_pd: bool,
    pub sparsity_norm: f64,
    pub sparsity_ok: bool,
    pub gain: Option<GainVector>,
    pub gamma: f64,
    pub vertices: Vec<VertexCheck>,
    pub passed: bool,
}

fn spectral_norm_sym(eig: &[f64]) -> f64 {
    eig.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Membership check of `(W, μ)` against every vertex; failures are report
/// entries rather than errors.
pub fn validate_certificate(
    cert: &Certificate,
    vertices: &[AugmentedSystem],
    tol: CheckTolerance,
) -> CertificateReport {
    let w = cert.full();
    let w_eig: Vec<f64> = w.symmetric_eigenvalues().iter().copied().collect();
    let w_norm = spectral_norm_sym(&w_eig).max(f64::MIN_POSITIVE);
    let psd_margin = w_eig.iter().copied().fold(f64::INFINITY, f64::min) / w_norm;
    let psd_ok = psd_margin >= -tol.eig_rel;
    let w1_pd = cert.w1.cholesky().is_some();
    let sparsity_norm = sparsity_residual(cert).norm();
    let sparsity_ok = sparsity_norm <= tol.eig_rel * w_norm;
    let gain = extract_gain(cert).ok();
    let gamma = cert.gamma();

    let checks: Vec<VertexCheck> = vertices
        .iter()
        .map(|aug| {
            let lifted = build_fqr(aug);
            let schur = schur_lmi(cert, &lifted);
            let s_eig: Vec<f64> = schur.symmetric_eigenvalues().iter().copied().collect();
            let s_norm = spectral_norm_sym(&s_eig).max(f64::MIN_POSITIVE);
            let schur_min = s_eig.iter().copied().fold(f64::INFINITY, f64::min) / s_norm;
            let theta1_max = theta(cert, &lifted).theta1.symmetric_eigenvalues().max() / s_norm;
            let lmi_ok = schur_min >= -tol.eig_rel && theta1_max <= tol.eig_rel;
            let (abscissa, hinf) = match gain {
                Some(k) => {
                    let cl = closed_loop(aug, &k);
                    (closed_loop_abscissa(&cl).ok(), hinf_norm(&cl, tol.hinf_tol).ok())
                }
                None => (None, None),
            };
            let stable = abscissa.is_some_and(|a| a < 0.0);
            let hinf_ok = cert.mu > 0.0 && hinf.is_some_and(|h| h <= gamma * (1.0 + tol.hinf_rel));
            VertexCheck { theta1_max, schur_min, lmi_ok, abscissa, hinf, stable, hinf_ok }
        })
        .collect();

    let passed = psd_ok
        && w1_pd
        && sparsity_ok
        && gain.is_some()
        && cert.mu > 0.0
        && checks.iter().all(|c| c.lmi_ok && c.stable && c.hinf_ok);
    CertificateReport { psd_margin, psd_ok, w1_pd, sparsity_norm, sparsity_ok, gain, gamma, vertices: checks, passed }
}

/// One lattice point of the uncertainty sweep, as fractions of nominal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub dm_frac: f64,
    pub dd_frac: f64,
    pub abscissa: f64,
    pub stable: bool,
    pub hinf: Option<f64>,
    pub is_vertex: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Row-major over `dm_frac` then `dd_frac`, both ascending.
    pub points: Vec<SweepPoint>,
    pub all_stable: bool,
    pub max_vertex_hinf: Option<f64>,
    pub max_interior_hinf: Option<f64>,
    /// Whether no interior norm exceeds the largest vertex norm.
    pub interior_within_vertex_bound: bool,
}

/// Stability and H-infinity norm over a `grid_n × grid_n` lattice of the box.
pub fn uncertainty_sweep(
    nominal: &SecondOrderPlant,
    bx: &UncertaintyBox,
    spec: &SCurveSpec,
    weights: &WeightSpec,
    k: &GainVector,
    grid_n: usize,
    hinf_tol: f64,
) -> Result<SweepReport, AnalysisError> {
    if grid_n < 2 {
        return Err(AnalysisError::GridTooSmall(grid_n));
    }
    bx.validate()?;
    let lerp = |lo: f64, hi: f64, i: usize| {
        if i == grid_n - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (grid_n - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(grid_n * grid_n);
    for i in 0..grid_n {
        for j in 0..grid_n {
            let dm_frac = lerp(bx.dm_lo, bx.dm_hi, i);
            let dd_frac = lerp(bx.dd_lo, bx.dd_hi, j);
            let aug = build_augmented(nominal, dm_frac * nominal.mass(), dd_frac * nominal.damping(), spec, weights)?;
            let cl = closed_loop(&aug, k);
            let abscissa = closed_loop_abscissa(&cl)?;
            let stable = abscissa < 0.0;
            let hinf = if stable { hinf_norm(&cl, hinf_tol).ok() } else { None };
            let is_vertex = (i == 0 || i == grid_n - 1) && (j == 0 || j == grid_n - 1);
            points.push(SweepPoint { dm_frac, dd_frac, abscissa, stable, hinf, is_vertex });
        }
    }
    let max_of = |vertex: bool| {
        points
            .iter()
            .filter(|p| p.is_vertex == vertex)
            .map(|p| p.hinf)
            .try_fold(f64::NEG_INFINITY, |a, h| h.map(|h| a.max(h)))
            .filter(|v| v.is_finite())
    };
    let max_vertex_hinf = max_of(true);
    let max_interior_hinf = max_of(false);
    let all_stable = points.iter().all(|p| p.stable);
    let interior_within_vertex_bound = match (max_interior_hinf, max_vertex_hinf) {
        (None, Some(_)) => grid_n == 2,
        (Some(i), Some(v)) => i <= v * (1.0 + 10.0 * hinf_tol),
        _ => false,
    };
    Ok(SweepReport { points, all_stable, max_vertex_hinf, max_interior_hinf, interior_within_vertex_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{to_pid, PidGains};
    use crate::model::polytope_vertices;
    use alloc::vec;
    use nalgebra::RowVector6;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ss(a: &[f64], b: &[f64], c: &[f64], n: usize, m: usize, p: usize) -> StateSpace {
        StateSpace {
            a: DMatrix::from_row_slice(n, n, a),
            b: DMatrix::from_row_slice(n, m, b),
            c: DMatrix::from_row_slice(p, n, c),
        }
    }

    fn maglev_vertices() -> [AugmentedSystem; 4] {
        polytope_vertices(
            &SecondOrderPlant::maglev_x_axis(),
            &UncertaintyBox::symmetric(0.3).unwrap(),
            &SCurveSpec::maglev_default(),
            &WeightSpec::maglev_default(),
        )
        .unwrap()
    }

    fn published_gain() -> GainVector {
        GainVector::from_pid(PidGains { kp: 47.71, ki: 1664.71, kd: 0.50 })
    }

    #[test]
    fn zero_gain_leaves_system() {
        let v = &maglev_vertices()[0];
        let cl = closed_loop(v, &GainVector::zeros());
        assert_eq!(cl.acl, v.a);
        assert_eq!(cl.ccl, v.c);
    }

    #[test]
    fn published_gain_closed_loop_row() {
        let nominal = build_augmented(
            &SecondOrderPlant::maglev_x_axis(),
            0.0,
            0.0,
            &SCurveSpec::maglev_default(),
            &WeightSpec::maglev_default(),
        )
        .unwrap();
        let cl = closed_loop(&nominal, &published_gain());
        let row: Vec<f64> = cl.acl.row(5).columns(3, 3).iter().copied().collect();
        let expect = [-665_884.0, -19_084.0, -202.0];
        for (r, e) in row.iter().zip(expect) {
            assert!((r - e).abs() < 1e-9 * e.abs(), "{row:?}");
        }
        assert_eq!(cl.acl.fixed_view::<3, 6>(0, 0), nominal.a.fixed_view::<3, 6>(0, 0));
        assert!(closed_loop_abscissa(&cl).unwrap() < 0.0);
    }

    #[test]
    fn abscissa_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]));
        assert_eq!(spectral_abscissa(&d).unwrap(), -1.0);
        let (az, _) = crate::model::scurve_matrices(&SCurveSpec::maglev_default());
        let a = spectral_abscissa(&DMatrix::from_column_slice(3, 3, az.as_slice())).unwrap();
        // A triple root perturbs by about eps^(1/3).
        assert!((a + 5.0).abs() < 1e-4, "{a}");
    }

    #[test]
    fn first_order_lag_norm() {
        let s = ss(&[-1.0], &[1.0], &[1.0], 1, 1, 1);
        let h = hinf_norm_ss(&s, 1e-8).unwrap();
        assert!((h - 1.0).abs() < 1e-7, "{h}");
    }

    #[test]
    fn double_integrator_rejected() {
        let s = ss(&[0.0, 1.0, 0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], 2, 1, 1);
        assert!(matches!(hinf_norm_ss(&s, 1e-6), Err(AnalysisError::Unstable { .. })));
    }

    #[test]
    fn lightly_damped_resonance() {
        // 1/(s² + 2ζωs + ω²) peaks at 1/(2ζω²√(1-ζ²)).
        let (w, z) = (30.0f64, 0.01f64);
        let s = ss(&[0.0, 1.0, -w * w, -2.0 * z * w], &[0.0, 1.0], &[1.0, 0.0], 2, 1, 1);
        let h = hinf_norm_ss(&s, 1e-8).unwrap();
        let expect = 1.0 / (2.0 * z * w * w * (1.0 - z * z).sqrt());
        assert!((h - expect).abs() < 1e-7 * expect, "{h} vs {expect}");
    }

    #[test]
    fn published_gain_vertex_norms() {
        for v in &maglev_vertices() {
            let h = hinf_norm(&closed_loop(v, &published_gain()), DEFAULT_HINF_TOL).unwrap();
            assert!(h <= 304.7995 * (1.0 + 1e-3), "{h}");
        }
    }

    #[test]
    fn riccati_of_zero_system() {
        let mut aug = maglev_vertices()[0].clone();
        aug.a = Matrix6::zeros();
        aug.c = Matrix4x6::zeros();
        let gamma = 2.0;
        let r = riccati_residual(&aug, &GainVector::zeros(), &Matrix6::identity(), gamma).unwrap();
        assert!((r.lambda_max - 0.25).abs() < 1e-15);
        let mut p = Matrix6::identity();
        p[(0, 1)] = 1.0;
        assert!(matches!(
            riccati_residual(&aug, &GainVector::zeros(), &p, gamma),
            Err(AnalysisError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn published_certificate_passes_at_print_tolerance() {
        let r = validate_certificate(&Certificate::published_maglev(), &maglev_vertices(), CheckTolerance::PRINT);
        assert!(r.passed, "{r:?}");
        assert!((r.gamma - 304.80).abs() < 0.005);
    }

    #[test]
    fn zero_certificate_fails() {
        let r = validate_certificate(&Certificate::zero(), &maglev_vertices(), CheckTolerance::PRINT);
        assert!(!r.w1_pd && !r.passed && r.gain.is_none());
    }

    #[test]
    fn sweep_lattice_edges() {
        let p = SecondOrderPlant::maglev_x_axis();
        let s = SCurveSpec::maglev_default();
        let w = WeightSpec::maglev_default();
        let bx = UncertaintyBox::symmetric(0.3).unwrap();
        let k = published_gain();
        let r = uncertainty_sweep(&p, &bx, &s, &w, &k, 2, DEFAULT_HINF_TOL).unwrap();
        assert_eq!(r.points.len(), 4);
        let corners: Vec<(f64, f64)> = r.points.iter().map(|p| (p.dm_frac, p.dd_frac)).collect();
        assert_eq!(corners, bx.corners().to_vec());
        assert!(r.all_stable && r.points.iter().all(|p| p.is_vertex));

        let flat = uncertainty_sweep(&p, &UncertaintyBox::degenerate(), &s, &w, &k, 3, DEFAULT_HINF_TOL).unwrap();
        assert!(flat.points.iter().all(|q| q.hinf == flat.points[0].hinf));
        assert!(matches!(
            uncertainty_sweep(&p, &bx, &s, &w, &k, 1, DEFAULT_HINF_TOL),
            Err(AnalysisError::GridTooSmall(1))
        ));
    }

    #[test]
    fn published_gain_grid_is_stable() {
        let r = uncertainty_sweep(
            &SecondOrderPlant::maglev_x_axis(),
            &UncertaintyBox::symmetric(0.3).unwrap(),
            &SCurveSpec::maglev_default(),
            &WeightSpec::maglev_default(),
            &published_gain(),
            11,
            DEFAULT_HINF_TOL,
        )
        .unwrap();
        assert_eq!(r.points.len(), 121);
        assert!(r.all_stable);
    }

    #[test]
    fn structured_gain_keeps_reference_rows() {
        let v = &maglev_vertices()[3];
        let k = GainVector(RowVector6::new(0.0, 0.0, 0.0, -3.0, -2.0, -1.0));
        let cl = closed_loop(v, &k);
        assert_eq!(cl.acl.fixed_rows::<3>(0), v.a.fixed_rows::<3>(0));
        assert!(to_pid(&k).is_ok());
    }

    /// Random Hurwitz system: `A = M - (α(M) + margin) I`.
    fn random_stable(rng: &mut ChaCha8Rng) -> StateSpace {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=3);
        let p = rng.random_range(1..=3);
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let shift = spectral_abscissa(&a).unwrap() + rng.random_range(0.05..1.0);
        for i in 0..n {
            a[(i, i)] -= shift;
        }
        StateSpace {
            a,
            b: DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)),
            c: DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn two_methods_agree_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let s = random_stable(&mut rng);
            let e = hinf_estimates(&s, 1e-8).unwrap();
            assert!(e.relative_disagreement() <= 1e-6, "{e:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn norm_scales_with_output(seed in any::<u64>(), alpha in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_stable(&mut rng);
            let h = hinf_norm_ss(&s, 1e-8).unwrap();
            let scaled = StateSpace { c: &s.c * alpha, ..s.clone() };
            let hs = hinf_norm_ss(&scaled, 1e-8).unwrap();
            prop_assert!((hs - alpha * h).abs() <= 1e-6 * alpha * h.max(1e-300));
        }
    }

    #[test]
    fn lemma_bridge_on_published_nominal() {
        let cert = Certificate::published_maglev();
        let k = extract_gain(&cert).unwrap();
        let p = cert.w1.try_inverse().unwrap();
        let p = (p + p.transpose()) * 0.5;
        let nominal = build_augmented(
            &SecondOrderPlant::maglev_x_axis(),
            0.0,
            0.0,
            &SCurveSpec::maglev_default(),
            &WeightSpec::maglev_default(),
        )
        .unwrap();
        let r = riccati_residual(&nominal, &k, &p, cert.gamma()).unwrap();
        assert!(r.relative() <= 1e-2, "{r:?}");
    }
}
