//! Toolkit for mathematical programs with orthogonality type constraints
//! (MPOC):
//!
//! ```text
//! min f(x)  s.t.  h(x) = 0,  g(x) >= 0,  F1(x)·F2(x) = 0,  F2(x) >= 0.
//! ```
//!
//! It certifies and classifies T-stationary points, drives a Scholtes-type
//! regularization towards them, audits the sparsity-constrained relaxation
//! and counts components of lower level sets on planar instances.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod cli;
pub mod error;
pub mod json;
pub mod landscape;
pub mod linalg;
pub mod nondegeneracy;
pub mod problem;
pub mod qp;
pub mod scholtes;
pub mod scno;
pub mod sqp;
pub mod stationarity;

pub use error::{Error, Result};
pub use problem::{active_sets, fd_derivative_check, feasibility_check, ActivePattern, MpocProblem, SmoothMap, Tolerances};
