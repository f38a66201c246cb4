//! Numerical toolkit for the Boltzmann equation linearized around the global
//! Maxwellian `μ(v) = exp(-|v|²)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] : velocity lattice, periodic slab, sphere rules, interpolation.
//! * [`collision`] : `Q(F,G)`, the `Γ_gain`/`Γ_loss` split, `ν(v)`, and a
//!   naive reference evaluator used as an oracle.
//! * [`linearized`] : the integral operator `K`, its kernel matrix and the
//!   damping rate `g_f`.
//! * [`solver`] : mild-form marching and Picard iteration.
//! * [`norms`], [`diagnostics`], [`lemma_lab`] : weighted mixed norms,
//!   excess conservation laws and entropy, empirical inequality constants.
//! * [`snapshot`], [`bench`] : binary field format and timing harness.
//!
//! Parallel loops go through [`exec`], which falls back to sequential
//! iteration when the `parallel` feature is disabled.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod collision;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod grid;
pub mod lemma_lab;
pub mod linearized;
pub mod norms;
pub mod snapshot;
pub mod solver;

pub use error::{Error, Result};

/// The global Maxwellian `μ(v) = exp(-|v|²)`.
#[inline]
pub fn maxwellian(v: [f64; 3]) -> f64 {
    (-norm_sq(v)).exp()
}

#[inline]
pub(crate) fn norm_sq(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
