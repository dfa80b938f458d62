// SPDX-License-Identifier: Apache-2.0

//! Dense primal log-det barrier solver for small LMI programs
//!
//! ```text
//! maximize cᵀx  subject to  S_i(x) = F0_i + Σ_k x_k F_ki ⪰ 0,
//! ```
//!
//! plus the structured synthesis problem built on top of it.
//!
//! The W₃ corner of the certificate only appears in `W ⪰ 0`, so it is not a
//! solver variable: the barrier would be unbounded in it. It is restored
//! after the solve as `W₂ᵀW₁⁻¹W₂ + tr(W₁)/6`, which keeps `W ≻ 0`. With the
//! sparsity pattern eliminated, W₁ is block diagonal and `W ⪰ 0` reduces to
//! `W₁ ⪰ 0`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
#[allow(unused_imports)]
use num_traits::Float;

use crate::lmi::{build_fqr, schur_lmi, Certificate, LiftedData, Matrix13};
use crate::model::AugmentedSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative duality-gap target `ν/t ≤ gap_tol·max(|cᵀx|, tiny)`.
    pub gap_tol: f64,
    /// Block feasibility slack, relative to the block's spectral norm.
    pub feas_tol: f64,
    /// Lower bound kept on μ.
    pub mu_min: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub barrier_factor: f64,
    /// Phase 1 stops once every (scaled) block has λ_min above this.
    pub strict_margin: f64,
    /// Centering stops when half the squared Newton decrement drops below
    /// this, or once the decrement is below [`DECREMENT_FLOOR`] and has
    /// stopped shrinking (rounding limits further progress).
    pub newton_tol: f64,
    pub t0: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            feas_tol: 1e-10,
            mu_min: 1e-12,
            max_outer: 60,
            max_newton: 200,
            barrier_factor: 10.0,
            strict_margin: 1e-9,
            newton_tol: 1e-10,
            t0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpError {
    DimensionMismatch { block: usize, expected: usize, found: usize },
    NoVertices,
    InvalidOptions(&'static str),
}

impl fmt::Display for SdpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { block, expected, found } => {
                write!(f, "block {block}: expected dimension {expected}, found {found}")
            }
            Self::NoVertices => write!(f, "at least one vertex system is required"),
            Self::InvalidOptions(why) => write!(f, "invalid solver options: {why}"),
        }
    }
}

impl core::error::Error for SdpError {}

/// One affine symmetric block `F0 + Σ x_k F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.constant.clone();
        for (k, fk) in self.coeffs.iter().enumerate() {
            if x[k] != 0.0 {
                s += fk * x[k];
            }
        }
        s
    }

    fn frobenius_scale(&self) -> f64 {
        let sq: f64 = self.coeffs.iter().chain(core::iter::once(&self.constant)).map(|m| m.norm_squared()).sum();
        if sq > 0.0 {
            1.0 / sq.sqrt()
        } else {
            1.0
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self { constant: &self.constant * s, coeffs: self.coeffs.iter().map(|m| m * s).collect() }
    }
}

/// `maximize cᵀx` over the intersection of the block constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProgram {
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
}

impl LmiProgram {
    pub fn new(objective: DVector<f64>, blocks: Vec<LmiBlock>) -> Result<Self, SdpError> {
        let n = objective.len();
        for (i, b) in blocks.iter().enumerate() {
            if b.coeffs.len() != n {
                return Err(SdpError::DimensionMismatch { block: i, expected: n, found: b.coeffs.len() });
            }
            let d = b.dim();
            if b.constant.ncols() != d {
                return Err(SdpError::DimensionMismatch { block: i, expected: d, found: b.constant.ncols() });
            }
            for m in &b.coeffs {
                if m.nrows() != d || m.ncols() != d {
                    return Err(SdpError::DimensionMismatch { block: i, expected: d, found: m.nrows() });
                }
            }
        }
        Ok(Self { objective, blocks })
    }

    pub fn nvars(&self) -> usize {
        self.objective.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(LmiBlock::dim).collect()
    }

    /// Barrier parameter ν: the sum of block dimensions.
    pub fn barrier_degree(&self) -> usize {
        self.blocks.iter().map(LmiBlock::dim).sum()
    }

    /// Same program with every block divided by its Frobenius norm.
    pub fn frobenius_scaled(&self) -> (Self, Vec<f64>) {
        let scales: Vec<f64> = self.blocks.iter().map(LmiBlock::frobenius_scale).collect();
        let blocks = self.blocks.iter().zip(&scales).map(|(b, s)| b.scaled(*s)).collect();
        (Self { objective: self.objective.clone(), blocks }, scales)
    }

    /// Smallest eigenvalue of each block at `x`, with the block's spectral norm.
    pub fn block_margins(&self, x: &DVector<f64>) -> Vec<(f64, f64)> {
        self.blocks
            .iter()
            .map(|b| {
                let s = b.eval(x);
                let eig = s.symmetric_eigenvalues();
                let norm = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                (eig.min(), norm)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Newton steps over both phases.
    pub iterations: usize,
    /// Final `ν/t` relative to `max(|objective|, tiny)`.
    pub gap: f64,
    /// Upper bound on the optimum from a dual-feasible point built at the
    /// last centered iterate.
    pub dual_bound: f64,
    /// Objective after each outer iteration.
    pub history: Vec<f64>,
    /// Smallest block eigenvalue relative to that block's spectral norm.
    pub min_relative_margin: f64,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase1Outcome {
    /// Every block has λ_min above the requested margin at `x`.
    Feasible(DVector<f64>),
    /// The slack optimum is provably positive: `s* ≥ lower_bound > 0`.
    Infeasible {
        lower_bound: f64,
    },
    /// Neither certificate was reached within the iteration budget.
    Undecided {
        slack: f64,
        lower_bound: f64,
    },
    NumericalFailure,
}

struct Factored {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    /// `Σ_i ⟨F0_i, S_i⁻¹⟩` and `Σ_i ⟨S_i⁻¹F_ki S_i⁻¹, F0_i⟩`, for the dual bound.
    f0_dot_inv: f64,
    f0_cross: DVector<f64>,
}

/// Gradient and Hessian of `-t·cᵀx - Σ log det S_i(x)`. `None` if a block
/// is not positive definite.
fn barrier_derivatives(p: &LmiProgram, x: &DVector<f64>, t: f64) -> Option<Factored> {
    let n = p.nvars();
    let mut grad = -&p.objective * t;
    let mut hess = DMatrix::zeros(n, n);
    let mut f0_dot_inv = 0.0;
    let mut f0_cross = DVector::zeros(n);
    for b in &p.blocks {
        let chol = b.eval(x).cholesky()?;
        let l = chol.l();
        let whiten = |m: &DMatrix<f64>| -> Option<DMatrix<f64>> {
            let half = l.solve_lower_triangular(m)?;
            let g = l.solve_lower_triangular(&half.transpose())?;
            Some((&g + g.transpose()) * 0.5)
        };
        let gs: Vec<DMatrix<f64>> = b.coeffs.iter().map(&whiten).collect::<Option<_>>()?;
        let g0 = whiten(&b.constant)?;
        f0_dot_inv += g0.trace();
        for k in 0..n {
            f0_cross[k] += gs[k].dot(&g0);
            grad[k] -= gs[k].trace();
            for j in k..n {
                let h = gs[k].dot(&gs[j]);
                hess[(k, j)] += h;
            }
        }
    }
    for k in 0..n {
        for j in 0..k {
            hess[(k, j)] = hess[(j, k)];
        }
    }
    Some(Factored { grad, hess, f0_dot_inv, f0_cross })
}

fn all_pd(p: &LmiProgram, x: &DVector<f64>) -> bool {
    p.blocks.iter().all(|b| b.eval(x).cholesky().is_some())
}

/// Jacobi-equilibrated Newton direction.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let d = DVector::from_iterator(
        n,
        (0..n).map(|k| {
            let h = hess[(k, k)];
            if h > 0.0 {
                1.0 / h.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut scaled = hess.clone();
    for j in 0..n {
        for i in 0..n {
            scaled[(i, j)] *= d[i] * d[j];
        }
    }
    let rhs = -grad.component_mul(&d);
    let y = match scaled.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => scaled.full_piv_lu().solve(&rhs)?,
    };
    let dx = y.component_mul(&d);
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

/// Decrement below which a stalled Newton iteration counts as centered. The
/// corrected dual stays feasible for any decrement below 1.
pub const DECREMENT_FLOOR: f64 = 1e-2;

enum CenterResult {
    /// `t·Σ⟨F0_i, Z_i⟩` for the Newton-corrected dual
    /// `Z_i = (S_i⁻¹ - S_i⁻¹ ΔS_i S_i⁻¹)/t`, which satisfies the dual
    /// equality constraints exactly and is PSD once the decrement is below 1.
    Centered {
        newton_steps: usize,
        dual_times_t: f64,
    },
    Stopped {
        newton_steps: usize,
    },
    Stalled {
        newton_steps: usize,
    },
    Failed,
}

/// Damped Newton centering. `stop` lets phase 1 return as soon as the
/// slack turns negative.
fn center(
    p: &LmiProgram,
    x: &mut DVector<f64>,
    t: f64,
    opts: &SolverOptions,
    stop: &dyn Fn(&DVector<f64>) -> bool,
) -> CenterResult {
    let mut prev_lambda = f64::INFINITY;
    for it in 0..opts.max_newton {
        let Some(fd) = barrier_derivatives(p, x, t) else {
            return CenterResult::Failed;
        };
        let Some(dx) = newton_direction(&fd.hess, &fd.grad) else {
            return CenterResult::Failed;
        };
        let dec2 = -fd.grad.dot(&dx);
        if !(dec2 >= 0.0) {
            return CenterResult::Failed;
        }
        let lambda = dec2.sqrt();
        let floored = lambda < DECREMENT_FLOOR && lambda > 0.5 * prev_lambda;
        if dec2 * 0.5 < opts.newton_tol || floored {
            let dual_times_t = fd.f0_dot_inv - dx.dot(&fd.f0_cross);
            return CenterResult::Centered { newton_steps: it, dual_times_t };
        }
        prev_lambda = lambda;
        let mut step = if lambda < 0.25 { 1.0 } else { 1.0 / (1.0 + lambda) };
        loop {
            let trial = &*x + &dx * step;
            if all_pd(p, &trial) {
                *x = trial;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                return CenterResult::Failed;
            }
        }
        if stop(x) {
            return CenterResult::Stopped { newton_steps: it + 1 };
        }
    }
    CenterResult::Stalled { newton_steps: opts.max_newton }
}

fn validate_options(opts: &SolverOptions) -> Result<(), SdpError> {
    if !(opts.barrier_factor > 1.0) {
        return Err(SdpError::InvalidOptions("barrier_factor must exceed 1"));
    }
    if !(opts.gap_tol > 0.0) || !(opts.newton_tol > 0.0) || !(opts.t0 > 0.0) {
        return Err(SdpError::InvalidOptions("tolerances and t0 must be positive"));
    }
    if opts.max_newton == 0 || opts.max_outer == 0 {
        return Err(SdpError::InvalidOptions("iteration limits must be positive"));
    }
    Ok(())
}

/// Phase-1 program: `min s` subject to `S_i(x) + s·I ⪰ 0`, written as a
/// maximization of `-s` over `(x, s)`.
fn slack_program(p: &LmiProgram) -> LmiProgram {
    let n = p.nvars();
    let mut objective = DVector::zeros(n + 1);
    objective[n] = -1.0;
    let blocks = p
        .blocks
        .iter()
        .map(|b| {
            let mut coeffs = b.coeffs.clone();
            coeffs.push(DMatrix::identity(b.dim(), b.dim()));
            LmiBlock { constant: b.constant.clone(), coeffs }
        })
        .collect();
    LmiProgram { objective, blocks }
}

/// Finds `x` with every block's λ_min above `opts.strict_margin`, starting
/// from `x0`, or certifies that no strictly feasible point exists. When the
/// margin itself is provably out of reach, the best strictly feasible point
/// found is returned instead.
pub fn phase1_program(p: &LmiProgram, x0: &DVector<f64>, opts: &SolverOptions) -> (Phase1Outcome, usize) {
    let margin = opts.strict_margin;
    let min_eig = p.blocks.iter().map(|b| b.eval(x0).symmetric_eigenvalues().min()).fold(f64::INFINITY, f64::min);
    if min_eig > margin {
        return (Phase1Outcome::Feasible(x0.clone()), 0);
    }
    let n = p.nvars();
    let aux = slack_program(p);
    let nu = aux.barrier_degree() as f64;
    let mut xs = DVector::zeros(n + 1);
    xs.rows_mut(0, n).copy_from(x0);
    xs[n] = margin - min_eig + 1.0;
    let mut t = opts.t0;
    let mut steps = 0;
    let stop = |z: &DVector<f64>| z[n] < -margin;
    for _ in 0..opts.max_outer {
        // `s* ≥ -dual/t` from the corrected dual of `max -s`; no bound off-center.
        let lower = match center(&aux, &mut xs, t, opts, &stop) {
            CenterResult::Failed => return (Phase1Outcome::NumericalFailure, steps),
            CenterResult::Stopped { newton_steps } => {
                steps += newton_steps;
                return (Phase1Outcome::Feasible(xs.rows(0, n).into_owned()), steps);
            }
            CenterResult::Centered { newton_steps, dual_times_t } => {
                steps += newton_steps;
                -dual_times_t / t
            }
            CenterResult::Stalled { newton_steps } => {
                steps += newton_steps;
                f64::NEG_INFINITY
            }
        };
        if stop(&xs) {
            return (Phase1Outcome::Feasible(xs.rows(0, n).into_owned()), steps);
        }
        if lower > 0.0 {
            return (Phase1Outcome::Infeasible { lower_bound: lower }, steps);
        }
        // Strictly feasible, and no point clears the requested margin.
        if xs[n] < 0.0 && lower > -margin {
            return (Phase1Outcome::Feasible(xs.rows(0, n).into_owned()), steps);
        }
        t *= opts.barrier_factor;
    }
    let slack = xs[n];
    (Phase1Outcome::Undecided { slack, lower_bound: slack - nu / t }, steps)
}

/// Path-following from a strictly feasible `x0` (phase 1 is run first if
/// `x0` is not strictly feasible).
pub fn solve_program(p: &LmiProgram, x0: &DVector<f64>, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    validate_options(opts)?;
    let (scaled, _) = p.frobenius_scaled();
    let nu = scaled.barrier_degree() as f64;
    let failed = |x: DVector<f64>, status, iterations, history| SdpSolution {
        objective: p.objective.dot(&x),
        x,
        status,
        iterations,
        gap: f64::INFINITY,
        dual_bound: f64::INFINITY,
        history,
        min_relative_margin: f64::NAN,
    };

    let (outcome, mut iterations) = phase1_program(&scaled, x0, opts);
    let mut x = match outcome {
        Phase1Outcome::Feasible(x) => x,
        Phase1Outcome::Infeasible { .. } => return Ok(failed(x0.clone(), SolveStatus::Infeasible, iterations, vec![])),
        Phase1Outcome::Undecided { .. } => {
            return Ok(failed(x0.clone(), SolveStatus::MaxIterations, iterations, vec![]))
        }
        Phase1Outcome::NumericalFailure => {
            return Ok(failed(x0.clone(), SolveStatus::NumericalFailure, iterations, vec![]))
        }
    };

    let mut t = opts.t0;
    let mut history = Vec::new();
    let never = |_: &DVector<f64>| false;
    for _ in 0..opts.max_outer {
        let dual_times_t = match center(&scaled, &mut x, t, opts, &never) {
            CenterResult::Centered { newton_steps, dual_times_t } => {
                iterations += newton_steps;
                dual_times_t
            }
            CenterResult::Stalled { newton_steps } | CenterResult::Stopped { newton_steps } => {
                iterations += newton_steps;
                return Ok(failed(x, SolveStatus::MaxIterations, iterations, history));
            }
            CenterResult::Failed => return Ok(failed(x, SolveStatus::NumericalFailure, iterations, history)),
        };
        let objective = p.objective.dot(&x);
        history.push(objective);
        let gap = nu / t / objective.abs().max(f64::MIN_POSITIVE);
        if gap <= opts.gap_tol {
            let min_relative_margin = p
                .block_margins(&x)
                .iter()
                .map(|(lmin, norm)| lmin / norm.max(f64::MIN_POSITIVE))
                .fold(f64::INFINITY, f64::min);
            let status = if min_relative_margin >= -opts.feas_tol {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalFailure
            };
            return Ok(SdpSolution {
                x,
                objective,
                status,
                iterations,
                gap,
                dual_bound: dual_times_t / t,
                history,
                min_relative_margin,
            });
        }
        t *= opts.barrier_factor;
    }
    Ok(failed(x, SolveStatus::MaxIterations, iterations, history))
}

/// Entry `(row, col)` of the 7x7 W (row ≤ col) carried by each W variable.
const W_ENTRIES: [(usize, usize); 15] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (1, 1),
    (1, 2),
    (2, 2),
    (3, 3),
    (3, 4),
    (3, 5),
    (4, 4),
    (4, 5),
    (5, 5),
    (3, 6),
    (4, 6),
    (5, 6),
];

/// Index of μ in the variable vector.
pub const MU_INDEX: usize = W_ENTRIES.len();
/// W entries plus μ.
pub const NVARS: usize = MU_INDEX + 1;

/// The structured synthesis problem: maximize μ subject to `W₁ ⪰ 0`, one
/// Schur block per vertex and `μ ≥ mu_min`, with the PID sparsity pattern
/// eliminated from the variable set.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub vertices: Vec<LiftedData>,
    pub mu_min: f64,
    program: LmiProgram,
}

fn certificate_from_vars(x: &[f64], mu: f64) -> Certificate {
    let mut c = Certificate::zero();
    for (&(i, j), v) in W_ENTRIES.iter().zip(x) {
        if j == 6 {
            c.w2[i] = *v;
        } else {
            c.w1[(i, j)] = *v;
            c.w1[(j, i)] = *v;
        }
    }
    c.mu = mu;
    c
}

fn to_dmatrix13(m: &Matrix13) -> DMatrix<f64> {
    DMatrix::from_column_slice(13, 13, m.as_slice())
}

fn w1_block(x: &[f64]) -> DMatrix<f64> {
    let c = certificate_from_vars(x, 0.0);
    DMatrix::from_column_slice(6, 6, c.w1.as_slice())
}

impl SdpProblem {
    pub fn assemble(vertices: &[AugmentedSystem], opts: &SolverOptions) -> Result<Self, SdpError> {
        if vertices.is_empty() {
            return Err(SdpError::NoVertices);
        }
        let lifted: Vec<LiftedData> = vertices.iter().map(build_fqr).collect();
        let unit = |k: usize| {
            let mut v = [0.0; NVARS];
            if k < NVARS {
                v[k] = 1.0;
            }
            v
        };
        let cert = |v: &[f64; NVARS]| certificate_from_vars(&v[..MU_INDEX], v[MU_INDEX]);

        let zero = [0.0; NVARS];
        let mut blocks = Vec::with_capacity(lifted.len() + 2);
        blocks.push(LmiBlock {
            constant: w1_block(&zero[..MU_INDEX]),
            coeffs: (0..NVARS).map(|k| w1_block(&unit(k)[..MU_INDEX])).collect(),
        });
        for l in &lifted {
            let base = schur_lmi(&cert(&zero), l);
            let coeffs = (0..NVARS).map(|k| to_dmatrix13(&(schur_lmi(&cert(&unit(k)), l) - base))).collect();
            blocks.push(LmiBlock { constant: to_dmatrix13(&base), coeffs });
        }
        let mut mu_coeffs = vec![DMatrix::zeros(1, 1); NVARS];
        mu_coeffs[MU_INDEX][(0, 0)] = 1.0;
        blocks.push(LmiBlock { constant: DMatrix::from_element(1, 1, -opts.mu_min), coeffs: mu_coeffs });

        let mut objective = DVector::zeros(NVARS);
        objective[MU_INDEX] = 1.0;
        let program = LmiProgram::new(objective, blocks)?;
        Ok(Self { vertices: lifted, mu_min: opts.mu_min, program })
    }

    pub fn nvars(&self) -> usize {
        self.program.nvars()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.program.block_dims()
    }

    pub fn program(&self) -> &LmiProgram {
        &self.program
    }

    /// Certificate for a variable vector, with W₃ restored as described in
    /// the module docs.
    pub fn certificate(&self, x: &DVector<f64>) -> Certificate {
        let mut c = certificate_from_vars(&x.as_slice()[..MU_INDEX], x[MU_INDEX]);
        let w1 = crate::lmi::symmetrize6(&c.w1);
        let quad = w1.cholesky().map(|ch| c.w2.dot(&ch.solve(&c.w2))).unwrap_or(0.0);
        c.w3 = quad + w1.trace() / 6.0;
        c
    }

    /// Variable vector for a certificate (W₃ is dropped).
    pub fn variables(cert: &Certificate) -> DVector<f64> {
        let mut x = DVector::zeros(NVARS);
        for (k, &(i, j)) in W_ENTRIES.iter().enumerate() {
            x[k] = if j == 6 { cert.w2[i] } else { cert.w1[(i, j)] };
        }
        x[MU_INDEX] = cert.mu;
        x
    }

    /// Phase-1 starting point `W₁ = αI, W₂ = 0, μ = 2·mu_min`, with α picked
    /// from a log grid to maximize the smallest scaled block eigenvalue.
    pub fn initial_guess(&self) -> DVector<f64> {
        let (scaled, _) = self.program.frobenius_scaled();
        let guess = |alpha: f64| {
            let mut c = Certificate::zero();
            c.w1 = Matrix6::identity() * alpha;
            c.w2 = Vector6::zeros();
            c.mu = 2.0 * self.mu_min;
            Self::variables(&c)
        };
        let margin = |x: &DVector<f64>| {
            scaled.blocks.iter().map(|b| b.eval(x).symmetric_eigenvalues().min()).fold(f64::INFINITY, f64::min)
        };
        let mut best = (f64::NEG_INFINITY, 1.0);
        for e in -80..=40 {
            let alpha = 10f64.powf(e as f64 / 8.0);
            let m = margin(&guess(alpha));
            if m > best.0 {
                best = (m, alpha);
            }
        }
        guess(best.1)
    }

    pub fn phase1(&self, opts: &SolverOptions) -> Phase1Outcome {
        let (scaled, _) = self.program.frobenius_scaled();
        phase1_program(&scaled, &self.initial_guess(), opts).0
    }

    /// W-only feasibility program at a fixed μ (the μ floor block drops out).
    pub fn fixed_mu_program(&self, mu: f64) -> LmiProgram {
        let blocks = self.program.blocks[..self.program.blocks.len() - 1]
            .iter()
            .map(|b| LmiBlock {
                constant: &b.constant + &b.coeffs[MU_INDEX] * mu,
                coeffs: b.coeffs[..MU_INDEX].to_vec(),
            })
            .collect();
        LmiProgram { objective: DVector::zeros(MU_INDEX), blocks }
    }
}

pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    solve_program(&p.program, &p.initial_guess(), opts)
}

/// Result of a fixed-μ feasibility test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
    Undecided,
}

/// Strict feasibility of the structured problem at a fixed μ.
pub fn feasible_at(p: &SdpProblem, mu: f64, opts: &SolverOptions) -> Feasibility {
    let (scaled, _) = p.fixed_mu_program(mu).frobenius_scaled();
    let x0 = p.initial_guess().rows(0, MU_INDEX).into_owned();
    let strict = SolverOptions { strict_margin: 0.0, ..*opts };
    match phase1_program(&scaled, &x0, &strict).0 {
        Phase1Outcome::Feasible(_) => Feasibility::Feasible,
        Phase1Outcome::Infeasible { .. } => Feasibility::Infeasible,
        Phase1Outcome::Undecided { .. } | Phase1Outcome::NumericalFailure => Feasibility::Undecided,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    /// Largest μ shown strictly feasible.
    pub lo: f64,
    /// Smallest μ shown infeasible (or undecided).
    pub hi: f64,
    pub steps: usize,
    /// True if some step could not be decided and was treated as infeasible.
    pub undecided: bool,
}

/// Bisection on μ with one phase-1 solve per step, stopping when
/// `hi - lo ≤ rel_tol·hi`. The starting bracket is found by growing μ by
/// factors of four from `mu_min`.
pub fn bisect_mu(p: &SdpProblem, rel_tol: f64, opts: &SolverOptions) -> Result<Bracket, SdpError> {
    validate_options(opts)?;
    let mut undecided = false;
    let mut steps = 0;
    let mut test = |mu: f64, steps: &mut usize| {
        *steps += 1;
        match feasible_at(p, mu, opts) {
            Feasibility::Feasible => true,
            Feasibility::Infeasible => false,
            Feasibility::Undecided => {
                undecided = true;
                false
            }
        }
    };
    let mut lo = p.mu_min;
    if !test(lo, &mut steps) {
        return Ok(Bracket { lo: 0.0, hi: lo, steps, undecided });
    }
    let mut hi = lo * 4.0;
    while test(hi, &mut steps) {
        lo = hi;
        hi *= 4.0;
        if !hi.is_finite() {
            return Ok(Bracket { lo, hi, steps, undecided });
        }
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if test(mid, &mut steps) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Bracket { lo, hi, steps, undecided })
}

/// `1x1` helper used by the scalar test programs.
pub fn scalar_block(constant: f64, coeffs: &[f64]) -> LmiBlock {
    LmiBlock {
        constant: DMatrix::from_element(1, 1, constant),
        coeffs: coeffs.iter().map(|c| DMatrix::from_element(1, 1, *c)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{polytope_vertices, SCurveSpec, SecondOrderPlant, UncertaintyBox, WeightSpec};

    fn maximize_scalar(blocks: Vec<LmiBlock>) -> SdpSolution {
        let p = LmiProgram::new(DVector::from_element(1, 1.0), blocks).unwrap();
        solve_program(&p, &DVector::zeros(1), &SolverOptions::default()).unwrap()
    }

    #[test]
    fn scalar_interval() {
        let s = maximize_scalar(vec![scalar_block(1.0, &[-1.0]), scalar_block(0.0, &[1.0])]);
        assert!(s.is_optimal());
        assert!((s.objective - 1.0).abs() < 1e-8, "{}", s.objective);
        assert!(s.dual_bound >= s.objective - 1e-12);
        assert!(s.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn two_by_two_determinant() {
        let b = LmiBlock {
            constant: DMatrix::identity(2, 2),
            coeffs: vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        };
        let s = maximize_scalar(vec![b]);
        assert!(s.is_optimal());
        assert!((s.objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_scalar() {
        let eps = 1e-3;
        let s = maximize_scalar(vec![scalar_block(-1.0, &[-1.0]), scalar_block(-eps, &[1.0])]);
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let b = scalar_block(0.0, &[1.0, 2.0]);
        assert!(matches!(LmiProgram::new(DVector::zeros(1), vec![b]), Err(SdpError::DimensionMismatch { .. })));
    }

    fn maglev_problem(frac: f64) -> SdpProblem {
        problem_with(frac, WeightSpec::maglev_default())
    }

    fn problem_with(frac: f64, weights: WeightSpec) -> SdpProblem {
        let v = polytope_vertices(
            &SecondOrderPlant::maglev_x_axis(),
            &UncertaintyBox::symmetric(frac).unwrap(),
            &SCurveSpec::maglev_default(),
            &weights,
        )
        .unwrap();
        SdpProblem::assemble(&v, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn structured_problem_shape() {
        let p = maglev_problem(0.3);
        assert_eq!(p.nvars(), 16);
        assert_eq!(p.block_dims(), vec![6, 13, 13, 13, 13, 1]);
        let flat = maglev_problem(0.0);
        let b = &flat.program().blocks;
        assert!(b[1] == b[2] && b[2] == b[3] && b[3] == b[4]);
    }

    #[test]
    fn variables_round_trip() {
        let c = Certificate::published_maglev();
        let p = maglev_problem(0.3);
        let back = p.certificate(&SdpProblem::variables(&c));
        assert_eq!(back.w1, c.w1);
        assert_eq!(back.w2, c.w2);
        assert_eq!(back.mu, c.mu);
    }

    #[test]
    fn blocks_are_affine_in_variables() {
        let p = maglev_problem(0.3);
        let c = Certificate::published_maglev();
        let x = SdpProblem::variables(&c);
        for (b, l) in p.program().blocks[1..5].iter().zip(&p.vertices) {
            let direct = to_dmatrix13(&schur_lmi(&c, l));
            let err = (b.eval(&x) - &direct).abs().max();
            assert!(err <= 1e-12 * direct.abs().max(), "{err}");
        }
    }

    #[test]
    fn phase1_finds_interior_point() {
        let p = maglev_problem(0.3);
        match p.phase1(&SolverOptions::default()) {
            Phase1Outcome::Feasible(x) => {
                let (scaled, _) = p.program().frobenius_scaled();
                assert!(all_pd(&scaled, &x));
            }
            other => panic!("{other:?}"),
        }
    }

    // Thin feasible sets: phase 1 cannot reach the strict margin and the
    // centering stalls at roundoff, yet both must still reach a verdict.
    #[test]
    fn heavy_weights_still_solve() {
        let opts = SolverOptions::default();
        for w in [(1e5, 1e2, 0.0, 1.0), (1e4, 1e4, 1.0, 1e2)] {
            let p = problem_with(0.3, WeightSpec::new(w.0, w.1, w.2, w.3).unwrap());
            let sol = solve(&p, &opts).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "{w:?}");
            assert!(sol.dual_bound >= p.certificate(&sol.x).mu);
        }
    }

    #[test]
    fn optimum_below_mu_min_is_infeasible() {
        let p = problem_with(0.3, WeightSpec::new(1e6, 1e6, 1e6, 1.0).unwrap());
        assert_eq!(solve(&p, &SolverOptions::default()).unwrap().status, SolveStatus::Infeasible);
    }
}
