//! Numerical toolkit for control-affine systems and their stochastic
//! counterparts: minimum-action steering, flow-map stability integrals,
//! controllability Gramians, Euler-Maruyama Monte Carlo, and empirical
//! transition-density diagnostics.
//!
//! The crate is organized around [`dynamics::ControlAffineSystem`], an
//! immutable description of `x' = f(x) + g(x)u` (equivalently the SDE
//! `dX = f dt + g dW`). Everything else consumes it:
//!
//! - [`flow`] integrates the autonomous flow and its Jacobian, and computes
//!   the stability integral that enters the action lower bound.
//! - [`action`] solves the two-point minimum-action steering problem by
//!   direct transcription and packages it with certified upper/lower bounds.
//! - [`linear`] provides closed-form ground truth (Gramian, exact action,
//!   Gaussian transition density) for linear systems.
//! - [`mc`] simulates SDE endpoints, estimates readout means/variances, and
//!   runs the 1/N Monte Carlo approximation-rate experiment.
//! - [`density`] estimates transition densities by histogram and checks the
//!   log-density vs. action relationship.
//!
//! All randomness is seeded explicitly; identical seeds give identical
//! results independent of thread count.

pub mod action;
pub mod config;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod flow;
pub mod linalg;
pub mod linear;
pub mod mc;
pub mod sampling;

mod integrate;


pub use dynamics::{ControlAffineSystem, LinearParams, RnnParams, Sigmoid};
pub use error::{Error, Result};
pub use flow::{StabilityEstimate, Trajectory};
pub use linear::GramianResult;

pub use sampling::SampleBox;
