//! Numerical homogenization with rough polyharmonic splines.
//!
//! The crate builds interpolation bases for divergence-form elliptic
//! operators with rough coefficients by minimizing the discrete norm of
//! div(a grad phi) subject to Kronecker constraints at coarse nodes, then
//! solves elliptic, parabolic and wave problems on the resulting coarse
//! spaces and measures how well they do.

pub mod analysis;
pub mod assembly;
pub mod coeff;
pub mod error;
pub mod homog;
pub mod mesh;
pub mod rps;
pub mod solver;
pub mod sparse;
pub mod timedep;

pub use error::{Result, RpsError};

// The Gram machinery exposes dense matrices; re-export the linear algebra
// crate so downstream users name the same types.
pub use nalgebra;
