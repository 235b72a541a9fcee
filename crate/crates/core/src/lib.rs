//! Sparse moments of nonnegative step functions on the unit interval.
//!
//! The crate covers the truncated Hausdorff moment problem for
//! piecewise-constant densities:
//!
//! - [`moments`]: exponent sets, step functions and their closed-form moments,
//!   the moment curve and the monotone single-jump curves.
//! - [`hankel`]: the Hankel-pair description of full moment sequences, PSD
//!   membership, recovery of boundary atomic measures and Schur determinants.
//! - [`sdp`]: a small dense primal-dual interior-point solver together with
//!   the membership and nearest-point programs built on top of it.
//! - [`coalescence`]: population histories, their transform to unit-interval
//!   step densities and coalescence vectors.
//! - [`oracle`]: brute-force checks (grid NNLS, multi-start polytope fits,
//!   fiber sampling) used to validate the convex machinery.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod coalescence;
mod error;
pub mod hankel;
pub mod linalg;
pub mod moments;
pub mod oracle;
pub mod sdp;

pub use error::{Error, Result};
pub use moments::{AtomicMeasure, ExponentSet, MomentVector, PolytopePoint, StepFunction};
