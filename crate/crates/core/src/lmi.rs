// SPDX-License-Identifier: Apache-2.0

//! Lifted (F, G, Q, R) data, the partitioned certificate W, the Θ blocks,
//! the PID sparsity operator, gain extraction and the Schur-form LMI.

use core::fmt;

use nalgebra::{Matrix3, Matrix6, RowVector3, RowVector6, SMatrix, SVector, Vector3, Vector6};

use crate::model::AugmentedSystem;
#[allow(unused_imports)]
use num_traits::Float;

pub type Matrix7 = SMatrix<f64, 7, 7>;
pub type Matrix13 = SMatrix<f64, 13, 13>;
pub type Vector7 = SVector<f64, 7>;
/// `[W_{1,2}, W_{2,1}]`.
pub type SparsityBlock = SMatrix<f64, 3, 4>;

#[derive(Debug, Clone, PartialEq)]
pub enum LmiError {
    /// W₁ failed a Cholesky factorization.
    W1NotPositiveDefinite,
    /// A PID mapping was requested for a gain with nonzero reference entries.
    NonSparseGain { residual: f64 },
}

impl fmt::Display for LmiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::W1NotPositiveDefinite => write!(f, "W1 is not positive definite"),
            Self::NonSparseGain { residual } => {
                write!(f, "gain has nonzero reference-state entries (max |k| = {residual:e})")
            }
        }
    }
}

impl core::error::Error for LmiError {}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedData {
    pub f: Matrix7,
    /// `[0; 1]`. Carried along with the other lifted matrices; no constraint uses it.
    pub g: Vector7,
    pub q: Matrix7,
    pub r: Matrix7,
    pub r_half: Matrix7,
}

/// Symmetric W split as `[[W1, W2], [W2ᵀ, W3]]` together with μ = 1/γ².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub w1: Matrix6<f64>,
    pub w2: Vector6<f64>,
    pub w3: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaBlocks {
    pub theta1: Matrix6<f64>,
    pub theta2: Vector6<f64>,
    pub theta3: f64,
}

impl ThetaBlocks {
    pub fn assemble(&self) -> Matrix7 {
        let mut m = Matrix7::zeros();
        m.fixed_view_mut::<6, 6>(0, 0).copy_from(&self.theta1);
        m.fixed_view_mut::<6, 1>(0, 6).copy_from(&self.theta2);
        m.fixed_view_mut::<1, 6>(6, 0).copy_from(&self.theta2.transpose());
        m[(6, 6)] = self.theta3;
        m
    }
}

/// State-feedback row `u_fb' = -K x` acting on the augmented state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainVector(pub RowVector6<f64>);

impl GainVector {
    pub fn zeros() -> Self {
        Self(RowVector6::zeros())
    }

    pub fn from_pid(pid: PidGains) -> Self {
        Self(RowVector6::new(0.0, 0.0, 0.0, -pid.ki, -pid.kp, -pid.kd))
    }

    /// True when the reference-state entries are bit-exactly zero.
    pub fn is_structured(&self) -> bool {
        self.0.columns(0, 3).iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Certificate {
    pub fn zero() -> Self {
        Self { w1: Matrix6::zeros(), w2: Vector6::zeros(), w3: 0.0, mu: 0.0 }
    }

    /// Splits a full 7x7 W (upper triangle is read).
    pub fn from_full(w: &Matrix7, mu: f64) -> Self {
        let sym = w.upper_triangle() + w.upper_triangle().transpose() - Matrix7::from_diagonal(&w.diagonal());
        Self {
            w1: sym.fixed_view::<6, 6>(0, 0).into_owned(),
            w2: sym.fixed_view::<6, 1>(0, 6).into_owned(),
            w3: sym[(6, 6)],
            mu,
        }
    }

    pub fn full(&self) -> Matrix7 {
        let mut w = Matrix7::zeros();
        w.fixed_view_mut::<6, 6>(0, 0).copy_from(&self.w1);
        w.fixed_view_mut::<6, 1>(0, 6).copy_from(&self.w2);
        w.fixed_view_mut::<1, 6>(6, 0).copy_from(&self.w2.transpose());
        w[(6, 6)] = self.w3;
        w
    }

    pub fn gamma(&self) -> f64 {
        1.0 / self.mu.sqrt()
    }

    /// The certificate printed for the maglev stage with ±30% mass and
    /// damping uncertainty, three significant figures.
    pub fn published_maglev() -> Self {
        #[rustfmt::skip]
        let w = Matrix7::from_row_slice(&[
            1.81e-1, -3.19e-1,  5.34e-2, 0.0,       0.0,       0.0,       0.0,
           -3.19e-1,  7.06e-1, -6.90e-1, 0.0,       0.0,       0.0,       0.0,
            5.34e-2, -6.90e-1,  3.12,    0.0,       0.0,       0.0,       0.0,
            0.0,      0.0,      0.0,     4.16e-7,  -1.62e-5,   3.54e-5,   5.60e-5,
            0.0,      0.0,      0.0,    -1.62e-5,   1.00e-3,  -2.95e-2,  -5.87e-3,
            0.0,      0.0,      0.0,     3.54e-5,  -2.95e-2,   2.74,     -3.62e-2,
            0.0,      0.0,      0.0,     5.60e-5,  -5.87e-3,  -3.62e-2,   7.21,
        ]);
        Self::from_full(&w, 1.0764e-5)
    }
}

/// `F = [[A, -B2], [0, 0]]`, `Q = blockdiag(B1 B1ᵀ, 0)`, `R = blockdiag(CᵀC, DᵀD)`.
pub fn build_fqr(aug: &AugmentedSystem) -> LiftedData {
    let mut f = Matrix7::zeros();
    f.fixed_view_mut::<6, 6>(0, 0).copy_from(&aug.a);
    f.fixed_view_mut::<6, 1>(0, 6).copy_from(&(-aug.b2));

    let mut g = Vector7::zeros();
    g[6] = 1.0;

    let mut q = Matrix7::zeros();
    q.fixed_view_mut::<6, 6>(0, 0).copy_from(&(aug.b1 * aug.b1.transpose()));

    let mut r = Matrix7::zeros();
    r.fixed_view_mut::<6, 6>(0, 0).copy_from(&(aug.c.transpose() * aug.c));
    r[(6, 6)] = aug.d.dot(&aug.d);

    let r_half = psd_sqrt(&r);
    LiftedData { f, g, q, r, r_half }
}

/// Symmetric square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &Matrix7) -> Matrix7 {
    let eig = m.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| if v > 0.0 { v.sqrt() } else { 0.0 });
    let v = eig.eigenvectors;
    let s = v * Matrix7::from_diagonal(&roots) * v.transpose();
    (s + s.transpose()) * 0.5
}

/// `Θ = F W + W Fᵀ + W R W + μ Q`, partitioned.
pub fn theta(cert: &Certificate, lifted: &LiftedData) -> ThetaBlocks {
    let w = cert.full();
    let fw = lifted.f * w;
    let th = fw + fw.transpose() + w * lifted.r * w + lifted.q * cert.mu;
    ThetaBlocks {
        theta1: th.fixed_view::<6, 6>(0, 0).into_owned(),
        theta2: th.fixed_view::<6, 1>(0, 6).into_owned(),
        theta3: th[(6, 6)],
    }
}

/// Θ₁ written out in the plant matrices:
/// `A W1 - B2 W2ᵀ + W1 Aᵀ - W2 B2ᵀ + W1 CᵀC W1 + W2 DᵀD W2ᵀ + μ B1 B1ᵀ`.
pub fn theta1_expanded(cert: &Certificate, aug: &AugmentedSystem) -> Matrix6<f64> {
    let (w1, w2) = (&cert.w1, &cert.w2);
    let aw = aug.a * w1;
    let bw = aug.b2 * w2.transpose();
    let ctc = aug.c.transpose() * aug.c;
    aw - bw + aw.transpose() - bw.transpose()
        + w1 * ctc * w1
        + w2 * w2.transpose() * aug.d.dot(&aug.d)
        + aug.b1 * aug.b1.transpose() * cert.mu
}

/// `[W_{1,2}, W_{2,1}]`: the coupling block of W₁ between reference and
/// error states next to the reference entries of W₂. Zero exactly when the
/// extracted gain is PID-structured.
pub fn sparsity_residual(cert: &Certificate) -> SparsityBlock {
    let mut out = SparsityBlock::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&cert.w1.fixed_view::<3, 3>(0, 3));
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&cert.w2.fixed_rows::<3>(0));
    out
}

/// `K = W2ᵀ W1⁻¹` by linear solves. When the sparsity residual is exactly
/// zero the reduced system on the error block is used and the reference
/// entries are set to exact zeros.
pub fn extract_gain(cert: &Certificate) -> Result<GainVector, LmiError> {
    let w1 = symmetrize6(&cert.w1);
    if w1.cholesky().is_none() {
        return Err(LmiError::W1NotPositiveDefinite);
    }
    if sparsity_residual(cert).iter().all(|v| *v == 0.0) {
        let w13: Matrix3<f64> = w1.fixed_view::<3, 3>(3, 3).into_owned();
        let w22: Vector3<f64> = cert.w2.fixed_rows::<3>(3).into_owned();
        let k = w13.full_piv_lu().solve(&w22).ok_or(LmiError::W1NotPositiveDefinite)?;
        let row: RowVector3<f64> = k.transpose();
        return Ok(GainVector(RowVector6::new(0.0, 0.0, 0.0, row[0], row[1], row[2])));
    }
    // W1 is symmetric, so Kᵀ = W1⁻¹ W2.
    let k = w1.full_piv_lu().solve(&cert.w2).ok_or(LmiError::W1NotPositiveDefinite)?;
    Ok(GainVector(k.transpose()))
}

/// `ki = -K4`, `kp = -K5`, `kd = -K6`.
pub fn to_pid(k: &GainVector) -> Result<PidGains, LmiError> {
    if !k.is_structured() {
        let residual = k.0.columns(0, 3).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        return Err(LmiError::NonSparseGain { residual });
    }
    Ok(PidGains { ki: -k.0[3], kp: -k.0[4], kd: -k.0[5] })
}

/// `[[-V F W Vᵀ - V W Fᵀ Vᵀ - μ V Q Vᵀ, V W R½], [R½ W Vᵀ, I7]]` with `V = [I6 0]`.
pub fn schur_lmi(cert: &Certificate, lifted: &LiftedData) -> Matrix13 {
    let w = cert.full();
    let fw = (lifted.f * w).fixed_view::<6, 6>(0, 0).into_owned();
    let top = -fw - fw.transpose() - lifted.q.fixed_view::<6, 6>(0, 0) * cert.mu;
    let off = (w * lifted.r_half).fixed_view::<6, 7>(0, 0).into_owned();
    let mut s = Matrix13::zeros();
    s.fixed_view_mut::<6, 6>(0, 0).copy_from(&top);
    s.fixed_view_mut::<6, 7>(0, 6).copy_from(&off);
    s.fixed_view_mut::<7, 6>(6, 0).copy_from(&off.transpose());
    s.fixed_view_mut::<7, 7>(6, 6).copy_from(&Matrix7::identity());
    s
}

pub(crate) fn symmetrize6(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_augmented, polytope_vertices, SCurveSpec, SecondOrderPlant, UncertaintyBox, WeightSpec};
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn nominal() -> AugmentedSystem {
        build_augmented(
            &SecondOrderPlant::maglev_x_axis(),
            0.0,
            0.0,
            &SCurveSpec::maglev_default(),
            &WeightSpec::maglev_default(),
        )
        .unwrap()
    }

    fn max_abs<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn lifted_weights() {
        let l = build_fqr(&nominal());
        let diag = [0.0, 0.0, 0.0, 1e8, 1e4, 0.0, 1.0];
        assert_eq!(l.r, Matrix7::from_diagonal(&Vector7::from_row_slice(&diag)));
        let half = [0.0, 0.0, 0.0, 1e4, 1e2, 0.0, 1.0];
        for (i, h) in half.iter().enumerate() {
            assert!((l.r_half[(i, i)] - h).abs() <= 1e-10 * (1.0 + h));
        }
        assert!(max_abs(&(l.r_half * l.r_half - l.r)) <= 1e-12 * 1e8);
        assert_eq!(l.f[(5, 6)], 400.0);
        assert!(l.f.row(6).iter().all(|v| *v == 0.0));
        assert_eq!(l.g[6], 1.0);
    }

    #[test]
    fn zero_weights_give_zero_root() {
        let mut aug = nominal();
        aug.c = nalgebra::Matrix4x6::zeros();
        aug.d = nalgebra::Vector4::zeros();
        let l = build_fqr(&aug);
        assert_eq!(l.r, Matrix7::zeros());
        assert_eq!(l.r_half, Matrix7::zeros());
    }

    #[test]
    fn theta_zero_and_identity_cases() {
        let l = build_fqr(&nominal());
        let mut c = Certificate::zero();
        c.mu = 1.0;
        assert_eq!(theta(&c, &l).theta1, Matrix6::identity());

        let c = Certificate::from_full(&Matrix7::identity(), 0.0);
        let th = theta(&c, &l).assemble();
        assert!(max_abs(&(th - (l.f + l.f.transpose() + l.r))) == 0.0);
    }

    #[test]
    fn sparsity_blocks() {
        let mut c = Certificate::zero();
        c.w1 = Matrix6::identity();
        c.w2 = Vector6::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0);
        assert_eq!(sparsity_residual(&c), SparsityBlock::zeros());
        assert_eq!(sparsity_residual(&Certificate::published_maglev()), SparsityBlock::zeros());
        let ones = Certificate::from_full(&Matrix7::from_element(1.0), 0.0);
        assert_eq!(sparsity_residual(&ones), SparsityBlock::from_element(1.0));
    }

    #[test]
    fn gain_extraction_identity() {
        let mut c = Certificate::zero();
        c.w1 = Matrix6::identity();
        c.w2 = Vector6::new(1.0, -2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(extract_gain(&c).unwrap().0, c.w2.transpose());

        c.w2 = Vector6::new(0.0, 0.0, 0.0, 0.5, -1.5, 2.0);
        let k = extract_gain(&c).unwrap();
        assert_eq!(k.0, RowVector6::new(0.0, 0.0, 0.0, 0.5, -1.5, 2.0));
        assert!(k.is_structured());

        assert_eq!(extract_gain(&Certificate::zero()), Err(LmiError::W1NotPositiveDefinite));
    }

    #[test]
    fn published_gain_is_loosely_reproduced() {
        // Three printed significant figures in a block whose entries span
        // 3.7e-7 to 0.21 leave the gain with only a loose match; the integral
        // gain is the most sensitive because it rides on the 3.726e-7 pivot.
        let k = extract_gain(&Certificate::published_maglev()).unwrap();
        assert!(k.is_structured());
        let pid = to_pid(&k).unwrap();
        assert!((pid.ki - 1664.71).abs() < 0.25 * 1664.71, "{pid:?}");
        assert!((pid.kp - 47.71).abs() < 0.25 * 47.71, "{pid:?}");
        assert!((pid.kd - 0.50).abs() < 0.25 * 0.50, "{pid:?}");
    }

    #[test]
    fn pid_mapping() {
        let k = GainVector(RowVector6::new(0.0, 0.0, 0.0, -1.0, -2.0, -3.0));
        assert_eq!(to_pid(&k).unwrap(), PidGains { kp: 2.0, ki: 1.0, kd: 3.0 });
        assert_eq!(to_pid(&GainVector::zeros()).unwrap(), PidGains { kp: 0.0, ki: 0.0, kd: 0.0 });
        let star = PidGains { kp: 47.71, ki: 1664.71, kd: 0.50 };
        assert_eq!(to_pid(&GainVector::from_pid(star)).unwrap(), star);
        let bad = GainVector(RowVector6::new(1e-3, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(matches!(to_pid(&bad), Err(LmiError::NonSparseGain { .. })));
    }

    #[test]
    fn schur_of_zero_certificate() {
        let s = schur_lmi(&Certificate::zero(), &build_fqr(&nominal()));
        let mut expect = Matrix13::zeros();
        expect.fixed_view_mut::<7, 7>(6, 6).copy_from(&Matrix7::identity());
        assert_eq!(s, expect);
        let lmin = s.symmetric_eigenvalues().min();
        assert!(lmin.abs() < 1e-15);
    }

    #[test]
    fn published_certificate_schur_within_print_tolerance() {
        let sys = polytope_vertices(
            &SecondOrderPlant::maglev_x_axis(),
            &UncertaintyBox::symmetric(0.3).unwrap(),
            &SCurveSpec::maglev_default(),
            &WeightSpec::maglev_default(),
        )
        .unwrap();
        let c = Certificate::published_maglev();
        for v in &sys {
            let s = schur_lmi(&c, &build_fqr(v));
            let eig = s.symmetric_eigenvalues();
            let norm = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(eig.min() >= -1e-2 * norm, "{} vs {}", eig.min(), norm);
        }
    }

    fn structured_cert(vals: &[f64], mu: f64) -> Certificate {
        let a = Matrix3::from_row_slice(&vals[0..9]);
        let b = Matrix3::from_row_slice(&vals[9..18]);
        let mut w1 = Matrix6::zeros();
        w1.fixed_view_mut::<3, 3>(0, 0).copy_from(&(a * a.transpose() + Matrix3::identity() * 0.1));
        w1.fixed_view_mut::<3, 3>(3, 3).copy_from(&(b * b.transpose() + Matrix3::identity() * 0.1));
        let w2 = Vector6::new(0.0, 0.0, 0.0, vals[18], vals[19], vals[20]);
        Certificate { w1, w2, w3: 1.0, mu }
    }

    proptest! {
        #[test]
        fn expanded_theta1_matches_block_formula(
            vals in proptest::collection::vec(-2.0f64..2.0, 21),
            mu in 0.0f64..2.0,
            dm in -0.3f64..0.3,
            dd in -0.3f64..0.3,
        ) {
            let p = SecondOrderPlant::maglev_x_axis();
            let aug = build_augmented(&p, dm * p.mass(), dd * p.damping(),
                &SCurveSpec::maglev_default(), &WeightSpec::maglev_default()).unwrap();
            let c = structured_cert(&vals, mu);
            let a = theta(&c, &build_fqr(&aug)).theta1;
            let b = theta1_expanded(&c, &aug);
            let scale = max_abs(&a).max(1.0);
            prop_assert!(max_abs(&(a - b)) <= 1e-12 * scale);
        }

        #[test]
        fn gain_reconstructs_w2_and_is_scale_invariant(
            vals in proptest::collection::vec(-2.0f64..2.0, 21),
            alpha in 1e-3f64..1e3,
        ) {
            let c = structured_cert(&vals, 1.0);
            let k = extract_gain(&c).unwrap();
            prop_assert!(k.is_structured());
            let w2 = c.w1 * k.0.transpose();
            let err = (w2 - c.w2).norm();
            prop_assert!(err <= 1e-10 * c.w2.norm().max(c.w1.norm()));

            let scaled = Certificate { w1: c.w1 * alpha, w2: c.w2 * alpha, ..c };
            let ks = extract_gain(&scaled).unwrap();
            prop_assert!((ks.0 - k.0).norm() <= 1e-10 * k.0.norm().max(1e-300));
        }
    }

    #[test]
    fn dense_gain_path() {
        let mut c = Certificate::zero();
        c.w1 = Matrix6::from_diagonal(&Vector6::new(2.0, 2.0, 2.0, 4.0, 4.0, 4.0));
        c.w2 = Vector6::new(2.0, 0.0, 0.0, 4.0, 8.0, 0.0);
        let k = extract_gain(&c).unwrap();
        let expect: Vec<f64> = [1.0, 0.0, 0.0, 1.0, 2.0, 0.0].into();
        assert_eq!(k.0.iter().copied().collect::<Vec<_>>(), expect);
    }
}
