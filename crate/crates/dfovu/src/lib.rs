//! Derivative-free VU solver for convex finite-max grey-box functions.
//!
//! The objective is `f(x) = max_j { 1/2 x' H_j x + b_j' x }`, available through a
//! grey-box oracle that reports every subfunction value at a point.  The solver
//! alternates a proximal bundle step built from simplex-gradient cuts (the
//! V-step) with a Newton step in the subspace where the function is locally
//! smooth (the U-step).  Supporting machinery includes a minimum-Frobenius-norm
//! quadratic fit for the U-Hessian, a dense simplex-constrained dual QP for the
//! proximal step, a random max-of-quadratics problem generator with known
//! solutions, and benchmark metrics (digits of accuracy, V-dimension recovery,
//! accuracy profiles).

pub mod bench;
pub mod driver;
pub mod error;
pub mod greybox;
pub mod qpkernels;
pub mod quadmodel;
pub mod stencil;
pub mod vstep;

pub use driver::{baseline_bundle_solve, dfo_vu_solve, RunReport, SolverConfig, Termination};
pub use error::SolverError;
pub use greybox::{EvalRecord, Oracle, ProblemSpec};
