// SPDX-License-Identifier: Apache-2.0

//! Robust PID-structured H-infinity state-feedback synthesis for a
//! second-order motion axis tracking a third-order S-curve.
//!
//! `model` builds the plant and tracking system, `lmi` the convex
//! parameterization, `sdp` solves it, `analysis` verifies the result and
//! `sim` runs the closed loop in time.

#![no_std]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
mod expm;
pub mod lmi;
pub mod model;
pub mod sdp;
pub mod sim;

pub use expm::expm;
