//! Locally sparse kernel-weighted estimation of generalized varying
//! coefficient models `E{Y(t)|X(t)} = g{β₀(t) + β₁(t)X(t)}` from
//! asynchronous longitudinal data.
//!
//! Response and covariate may be observed at different time points within
//! each subject. All response × covariate observation pairs enter a
//! kernel-weighted estimating equation; the coefficient functions are
//! expanded in a clamped B-spline basis with a curvature penalty, and a
//! functional SCAD penalty on per-knot-interval norms drives `β₁` to exact
//! zero on subintervals where it carries no signal. The equation is solved
//! by iteratively reweighted least squares with an active-set shrink rule.
//!
//! Modules:
//! - [`longdata`]: data model and CSV ingestion,
//! - [`bspline`]: basis evaluation and exact penalty integrals,
//! - [`kernel`]: kernel weights, bandwidth rule, pair expansion,
//! - [`family`]: Gaussian / Bernoulli / Poisson response families,
//! - [`scad`]: SCAD penalty and its quadratic majorization,
//! - [`irls`]: the penalized solver,
//! - [`tuning`]: information-criterion and cross-validation tuning,
//! - [`simbench`]: simulation generators, metrics, Monte Carlo runner.

pub mod bspline;
pub mod error;
pub mod family;
pub mod irls;
pub mod kernel;
pub mod longdata;
pub mod scad;
pub mod simbench;
pub mod tuning;

pub use error::{LockerError, Result};
