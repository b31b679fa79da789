//! Numerics for flag-structured Cowen-Douglas operators at finite truncation.
//!
//! The crate is organised bottom-up:
//!
//! * [`shift`] builds weighted backward shifts and dense operator helpers.
//! * [`geometry`] evaluates holomorphic sections, metrics, curvature and
//!   Chern polynomials on disk grids.
//! * [`flag`] assembles block upper-triangular flag operators and
//!   orthogonalizes idempotent families.
//! * [`intertwine`] solves Sylvester equations, filters truncation artifacts
//!   from intertwiner kernels and computes compact corrections.
//! * [`comparator`] decides unitary and (U+K)-equivalence on grid samples.
//!
//! All operators act on the standard basis `e_0..e_{N-1}` and shifts are
//! backward: `T e_{k+1} = a_{k,k+1} e_k`, so every matrix is upper triangular.

pub mod band;
pub mod comparator;
pub mod error;
pub mod fit;
pub mod flag;
pub mod geometry;
pub mod intertwine;
pub mod linalg;
pub mod series;
pub mod shift;

pub use error::{CdError, Result};
pub use num_complex::Complex64;
