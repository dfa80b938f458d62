// SPDX-License-Identifier: Apache-2.0

//! Matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant (Higham 2005 parameter set).

use nalgebra::{allocator::Allocator, DefaultAllocator, Dim, DimMin, OMatrix};
// Float math in no_std; std shadows it with inherent methods under test.
#[allow(unused_imports)]
use num_traits::Float;

const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm<D: Dim>(a: &OMatrix<f64, D, D>) -> f64
where
    DefaultAllocator: Allocator<D, D>,
{
    (0..a.ncols()).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(a)` for a square real matrix.
///
/// Returns `None` only if the Padé denominator is singular, which does not
/// happen for finite input after scaling.
pub fn expm<D: DimMin<D, Output = D>>(a: &OMatrix<f64, D, D>) -> Option<OMatrix<f64, D, D>>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    let (nrows, ncols) = a.shape_generic();
    let norm = one_norm(a);
    if !norm.is_finite() {
        return None;
    }
    let mut squarings = 0i32;
    if norm > THETA_13 {
        squarings = (norm / THETA_13).log2().ceil() as i32;
    }
    let scaled = a * 2f64.powi(-squarings);

    let ident = OMatrix::<f64, D, D>::identity_generic(nrows, ncols);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE_13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.full_piv_lu().solve(&p)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Some(r)
}
