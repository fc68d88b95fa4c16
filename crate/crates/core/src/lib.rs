//! Computation of rate-distortion functions and successive-refinement
//! rate regions for finite alphabets.
//!
//! The crate solves the dual (Lagrangian) form of both problems with
//! generalized Blahut iterations, checks the resulting certificates against
//! their optimality conditions, and turns them into tilted information
//! densities and finite-blocklength converse bounds.
//!
//! ```
//! use refine_rd::prob::{Matrix, Pmf};
//! use refine_rd::single::{run_blahut, RdProblem, RunOptions};
//!
//! let px = Pmf::new(vec![0.5, 0.5]).unwrap();
//! let hamming = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
//! let problem = RdProblem::new(px, hamming).unwrap();
//! let lambda = 9f64.ln(); // slope of the curve at d = 0.1
//! let run = run_blahut(&problem, lambda, &Pmf::uniform(2), &RunOptions::default()).unwrap();
//! let rate = run.dual.f_value - lambda * 0.1;
//! assert!((rate - (2f64.ln() - refine_rd::oracles::binary_entropy(0.1))).abs() < 1e-8);
//! ```
//!
//! All information quantities are in nats.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod converse;
pub mod error;
pub mod gaussian;
pub mod nnls;
pub mod oracles;
pub mod par;
pub mod prob;
pub mod single;
pub mod successive;

pub use error::{Error, Result};
