// SPDX-License-Identifier: Apache-2.0

//! Plant, reference generator, augmented tracking system, uncertainty
//! polytope and the 6-DoF force-allocation map.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Matrix3, Matrix4x6, Matrix6, RowVector3, SMatrix, SVector, Vector3, Vector4, Vector6};

use crate::expm::expm;
#[allow(unused_imports)]
use num_traits::Float;

/// 6x8 force allocation matrix.
pub type AllocationMatrix = SMatrix<f64, 6, 8>;
/// Global wrench `[Fx, Fy, Fz, Tx, Ty, Tz]`.
pub type Wrench = SVector<f64, 6>;
/// Local forces `[F1x, F1z, F2y, F2z, F3x, F3z, F4y, F4z]`.
pub type LocalForces = SVector<f64, 8>;

/// Default arm length used by the allocation demo (m).
pub const DEFAULT_ARM_LENGTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    NonPositiveMass(f64),
    NegativeDamping(f64),
    InvalidUncertaintyBox(&'static str),
    NotHurwitz { z: [f64; 3] },
    InvalidWeights(&'static str),
    EmptyGrid,
    GridNotAtZero(f64),
    GridNotAscending { index: usize },
    NonPositiveArmLength(f64),
    SingularAllocation,
    NonFinite(&'static str),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveMass(m) => write!(f, "mass must be positive, got {m}"),
            Self::NegativeDamping(d) => write!(f, "damping must be nonnegative, got {d}"),
            Self::InvalidUncertaintyBox(why) => write!(f, "invalid uncertainty box: {why}"),
            Self::NotHurwitz { z } => {
                write!(f, "reference companion matrix with bottom row [{}, {}, {}] is not Hurwitz", z[0], z[1], z[2])
            }
            Self::InvalidWeights(why) => write!(f, "invalid weights: {why}"),
            Self::EmptyGrid => write!(f, "time grid is empty"),
            Self::GridNotAtZero(t) => write!(f, "time grid must start at 0, starts at {t}"),
            Self::GridNotAscending { index } => {
                write!(f, "time grid is not strictly ascending at index {index}")
            }
            Self::NonPositiveArmLength(l) => write!(f, "arm length must be positive, got {l}"),
            Self::SingularAllocation => write!(f, "allocation Gram matrix is singular"),
            Self::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for ModelError {}

/// Lumped single-axis plant `m y'' + d y' = u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderPlant {
    m: f64,
    d: f64,
}

impl SecondOrderPlant {
    pub fn new(m: f64, d: f64) -> Result<Self, ModelError> {
        if !(m.is_finite() && d.is_finite()) {
            return Err(ModelError::NonFinite("plant"));
        }
        if m <= 0.0 {
            return Err(ModelError::NonPositiveMass(m));
        }
        if d < 0.0 {
            return Err(ModelError::NegativeDamping(d));
        }
        Ok(Self { m, d })
    }

    /// Nominal x-axis model identified on the maglev stage: m = 1/400, d = 1/200.
    pub fn maglev_x_axis() -> Self {
        Self { m: 1.0 / 400.0, d: 1.0 / 200.0 }
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    pub fn damping(&self) -> f64 {
        self.d
    }

    /// Plant with `m(1 + dm_frac)` and `d(1 + dd_frac)`.
    pub fn perturbed(&self, dm_frac: f64, dd_frac: f64) -> Result<Self, ModelError> {
        Self::new(self.m * (1.0 + dm_frac), self.d * (1.0 + dd_frac))
    }
}

/// Fractional bounds on the mass and damping perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyBox {
    pub dm_lo: f64,
    pub dm_hi: f64,
    pub dd_lo: f64,
    pub dd_hi: f64,
}

impl UncertaintyBox {
    pub fn new(dm_lo: f64, dm_hi: f64, dd_lo: f64, dd_hi: f64) -> Result<Self, ModelError> {
        let b = Self { dm_lo, dm_hi, dd_lo, dd_hi };
        b.validate()?;
        Ok(b)
    }

    /// Symmetric box `[-frac, +frac]` on both parameters.
    pub fn symmetric(frac: f64) -> Result<Self, ModelError> {
        Self::new(-frac, frac, -frac, frac)
    }

    pub fn degenerate() -> Self {
        Self { dm_lo: 0.0, dm_hi: 0.0, dd_lo: 0.0, dd_hi: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.dm_lo, self.dm_hi, self.dd_lo, self.dd_hi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("uncertainty box"));
        }
        if self.dm_lo > self.dm_hi {
            return Err(ModelError::InvalidUncertaintyBox("dm_lo > dm_hi"));
        }
        if self.dd_lo > self.dd_hi {
            return Err(ModelError::InvalidUncertaintyBox("dd_lo > dd_hi"));
        }
        if 1.0 + self.dm_lo <= 0.0 {
            return Err(ModelError::InvalidUncertaintyBox("1 + dm_lo must be positive"));
        }
        if 1.0 + self.dd_lo < 0.0 {
            return Err(ModelError::InvalidUncertaintyBox("1 + dd_lo must be nonnegative"));
        }
        Ok(())
    }

    /// Corners in the fixed order (lo,lo), (lo,hi), (hi,lo), (hi,hi) of (dm, dd).
    pub fn corners(&self) -> [(f64, f64); 4] {
        [(self.dm_lo, self.dd_lo), (self.dm_lo, self.dd_hi), (self.dm_hi, self.dd_lo), (self.dm_hi, self.dd_hi)]
    }
}

/// Third-order reference generator `rho' = A_z rho`, `r = p + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SCurveSpec {
    pub z: [f64; 3],
    pub rho0: [f64; 3],
    pub offset: f64,
}

impl SCurveSpec {
    pub fn new(z: [f64; 3], rho0: [f64; 3], offset: f64) -> Result<Self, ModelError> {
        let s = Self { z, rho0, offset };
        s.validate()?;
        Ok(s)
    }

    /// Triple pole at -5 rad/s, starting 0.02 mm below the set-point and
    /// shifted so that the profile runs from 0 to 0.02 mm.
    pub fn maglev_default() -> Self {
        Self { z: [-125.0, -75.0, -15.0], rho0: [-2.0e-5, 0.0, 0.0], offset: 2.0e-5 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.z.iter().chain(self.rho0.iter()).any(|v| !v.is_finite()) || !self.offset.is_finite() {
            return Err(ModelError::NonFinite("s-curve spec"));
        }
        if !companion_is_hurwitz(self.z) {
            return Err(ModelError::NotHurwitz { z: self.z });
        }
        Ok(())
    }
}

/// Routh-Hurwitz test for `s^3 - z3 s^2 - z2 s - z1`.
pub fn companion_is_hurwitz(z: [f64; 3]) -> bool {
    let (a2, a1, a0) = (-z[2], -z[1], -z[0]);
    a2 > 0.0 && a1 > 0.0 && a0 > 0.0 && a2 * a1 > a0
}

/// Output weights on `e`, `e'`, `e''` and on the fictitious input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub r: f64,
}

impl WeightSpec {
    pub fn new(q1: f64, q2: f64, q3: f64, r: f64) -> Result<Self, ModelError> {
        let w = Self { q1, q2, q3, r };
        w.validate()?;
        Ok(w)
    }

    pub fn maglev_default() -> Self {
        Self { q1: 1.0e4, q2: 1.0e2, q3: 0.0, r: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if [self.q1, self.q2, self.q3, self.r].iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("weights"));
        }
        if self.q1 < 0.0 || self.q2 < 0.0 || self.q3 < 0.0 {
            return Err(ModelError::InvalidWeights("q1, q2, q3 must be nonnegative"));
        }
        if self.r <= 0.0 {
            return Err(ModelError::InvalidWeights("r must be positive"));
        }
        Ok(())
    }
}

/// Realization `x' = A x + B2 u_fb' + B1 w`, `z = C x + D u_fb'` with
/// `x = [p, p', p'', e, e', e'']`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub a: Matrix6<f64>,
    pub b1: Matrix6<f64>,
    pub b2: Vector6<f64>,
    pub c: Matrix4x6<f64>,
    pub d: Vector4<f64>,
}

/// Companion matrix and output row of the reference generator.
pub fn scurve_matrices(spec: &SCurveSpec) -> (Matrix3<f64>, RowVector3<f64>) {
    let [z1, z2, z3] = spec.z;
    let a = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, z1, z2, z3);
    (a, RowVector3::new(1.0, 0.0, 0.0))
}

/// Reference position and its first three derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceSample {
    pub r: f64,
    pub rd: f64,
    pub rdd: f64,
    pub rddd: f64,
}

impl ReferenceSample {
    pub(crate) fn from_state(spec: &SCurveSpec, rho: &Vector3<f64>) -> Self {
        let [z1, z2, z3] = spec.z;
        Self { r: rho[0] + spec.offset, rd: rho[1], rdd: rho[2], rddd: z1 * rho[0] + z2 * rho[1] + z3 * rho[2] }
    }
}

/// Samples the reference at every grid time using the exact transition
/// matrix `exp(A_z (t_k - t_{k-1}))`.
pub fn reference_trajectory(spec: &SCurveSpec, t_grid: &[f64]) -> Result<Vec<ReferenceSample>, ModelError> {
    spec.validate()?;
    let first = *t_grid.first().ok_or(ModelError::EmptyGrid)?;
    if first != 0.0 {
        return Err(ModelError::GridNotAtZero(first));
    }
    for (k, w) in t_grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(ModelError::GridNotAscending { index: k + 1 });
        }
    }
    let (az, _) = scurve_matrices(spec);
    let mut rho = Vector3::from(spec.rho0);
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(ReferenceSample::from_state(spec, &rho));
    let mut cached: Option<(f64, Matrix3<f64>)> = None;
    for w in t_grid.windows(2) {
        let h = w[1] - w[0];
        let phi = match cached {
            Some((hc, phi)) if hc == h => phi,
            _ => {
                let phi = expm(&(az * h)).ok_or(ModelError::NonFinite("transition matrix"))?;
                cached = Some((h, phi));
                phi
            }
        };
        rho = phi * rho;
        out.push(ReferenceSample::from_state(spec, &rho));
    }
    Ok(out)
}

/// Reference state at an arbitrary time, `exp(A_z t) rho0`.
pub fn reference_at(spec: &SCurveSpec, t: f64) -> Result<ReferenceSample, ModelError> {
    let (az, _) = scurve_matrices(spec);
    let phi = expm(&(az * t)).ok_or(ModelError::NonFinite("transition matrix"))?;
    Ok(ReferenceSample::from_state(spec, &(phi * Vector3::from(spec.rho0))))
}

/// `u_ff = m r'' + d r'`.
pub fn feedforward(plant: &SecondOrderPlant, rdot: f64, rddot: f64) -> f64 {
    plant.m * rddot + plant.d * rdot
}

/// Augmented tracking system for absolute perturbations `dm`, `dd`
/// around the nominal plant (the feedforward uses the nominal plant).
pub fn build_augmented(
    nominal: &SecondOrderPlant,
    dm: f64,
    dd: f64,
    spec: &SCurveSpec,
    weights: &WeightSpec,
) -> Result<AugmentedSystem, ModelError> {
    let mass = nominal.m + dm;
    if !(mass > 0.0) {
        return Err(ModelError::NonPositiveMass(mass));
    }
    weights.validate()?;
    let [z1, z2, z3] = spec.z;

    let mut a = Matrix6::zeros();
    a[(0, 1)] = 1.0;
    a[(1, 2)] = 1.0;
    a[(2, 0)] = z1;
    a[(2, 1)] = z2;
    a[(2, 2)] = z3;
    a[(3, 4)] = 1.0;
    a[(4, 5)] = 1.0;
    a[(5, 0)] = z1 * dm / mass;
    a[(5, 1)] = z2 * dm / mass;
    a[(5, 2)] = (z3 * dm + dd) / mass;
    a[(5, 5)] = -(nominal.d + dd) / mass;

    let mut b2 = Vector6::zeros();
    b2[5] = -1.0 / mass;

    let mut c = Matrix4x6::zeros();
    c[(0, 3)] = weights.q1;
    c[(1, 4)] = weights.q2;
    c[(2, 5)] = weights.q3;
    let d = Vector4::new(0.0, 0.0, 0.0, weights.r);

    Ok(AugmentedSystem { a, b1: Matrix6::identity(), b2, c, d })
}

/// Augmented systems at the four box corners, in [`UncertaintyBox::corners`] order.
pub fn polytope_vertices(
    nominal: &SecondOrderPlant,
    bx: &UncertaintyBox,
    spec: &SCurveSpec,
    weights: &WeightSpec,
) -> Result<[AugmentedSystem; 4], ModelError> {
    bx.validate()?;
    let c = bx.corners();
    let at = |(fm, fd): (f64, f64)| build_augmented(nominal, fm * nominal.m, fd * nominal.d, spec, weights);
    Ok([at(c[0])?, at(c[1])?, at(c[2])?, at(c[3])?])
}

/// Force/torque map of the four-forcer stage.
#[derive(Debug, Clone, PartialEq)]
pub struct WrenchAllocator {
    arm_length: f64,
    m: AllocationMatrix,
}

impl WrenchAllocator {
    pub fn new(arm_length: f64) -> Result<Self, ModelError> {
        if !arm_length.is_finite() {
            return Err(ModelError::NonFinite("arm length"));
        }
        if arm_length <= 0.0 {
            return Err(ModelError::NonPositiveArmLength(arm_length));
        }
        let l = arm_length;
        #[rustfmt::skip]
        let m = AllocationMatrix::from_row_slice(&[
            0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0,
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0,
            0.0, 0.0, 0.0, -l,  0.0, 0.0, 0.0, l,
            0.0, -l,  0.0, 0.0, 0.0, l,   0.0, 0.0,
            l,   0.0, -l,  0.0, -l,  0.0, l,   0.0,
        ]);
        Ok(Self { arm_length, m })
    }

    pub fn arm_length(&self) -> f64 {
        self.arm_length
    }

    pub fn matrix(&self) -> &AllocationMatrix {
        &self.m
    }

    /// `F_g = M F_l`.
    pub fn compose_wrench(&self, local: &LocalForces) -> Wrench {
        self.m * local
    }

    /// Minimum-norm local forces `M^T (M M^T)^{-1} F_g`.
    pub fn allocate_forces(&self, wrench: &Wrench) -> Result<LocalForces, ModelError> {
        let gram = self.m * self.m.transpose();
        let chol = gram.cholesky().ok_or(ModelError::SingularAllocation)?;
        Ok(self.m.transpose() * chol.solve(wrench))
    }
}

/// Convenience wrapper over [`WrenchAllocator::allocate_forces`].
pub fn allocate_forces(wrench: &Wrench, arm_length: f64) -> Result<LocalForces, ModelError> {
    WrenchAllocator::new(arm_length)?.allocate_forces(wrench)
}

/// Convenience wrapper over [`WrenchAllocator::compose_wrench`].
pub fn compose_wrench(local: &LocalForces, arm_length: f64) -> Result<Wrench, ModelError> {
    Ok(WrenchAllocator::new(arm_length)?.compose_wrench(local))
}
