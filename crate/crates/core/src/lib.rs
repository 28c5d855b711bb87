//! Spatio-temporal linear instability analysis of polynomial dispersion
//! relations with dual Lefschetz thimbles.
//!
//! The pipeline for one observer frame `v` is:
//!
//! 1. [`critical::find_critical_points`]: stationary points of `h = Im(k·v)` on `Δ = 0`;
//! 2. [`flow::build_dual_thimble`]: upward flow lines seeded around each point;
//! 3. [`intersection::intersection_form`]: whether the imaginary spatial projection
//!    of a section of the thimble above every point of the contour (the
//!    constant-height section when the contour bound is known) encloses the
//!    origin;
//! 4. [`asymptotics`]: the leading-order Green function and growth verdict.
//!
//! [`oracle`] evaluates the same Green function by direct quadrature.

pub mod asymptotics;
pub mod critical;
pub mod error;
pub mod flow;
pub mod intersection;
pub mod linalg;
pub mod matrix;
pub mod oracle;
pub mod parse;
pub mod pipeline;
pub mod poly;
pub mod problem;
pub mod roots;

pub use error::{Error, Result};
pub use matrix::PolyMatrix;
pub use poly::CPoly;
pub use problem::{parse_dispersion, KPoint, Problem, ProblemFile, Velocity};
