//! Mesh-free solver for linear and nonlinear Poisson problems on the unit
//! n-ball (n = 2..5).
//!
//! The unknown is written as `u = v·(1 − r²)` and `v` is a fully connected
//! sigmoid perceptron. Training minimizes the mean squared residual of the
//! substituted equation together with the squared derivatives of that residual
//! (up to fourth order) along two random orthonormal directions per
//! collocation point. All derivatives of the network output are carried
//! through the layers as "slots" and differentiated exactly, including the
//! gradient of the cost with respect to every weight.
//!
//! Module map:
//!
//! * [`jets`] – truncated Taylor arithmetic, used for residual assembly and
//!   for the analytic source terms.
//! * [`slotnet`] – the extended perceptron: slot enumeration, Faà di Bruno
//!   propagation through the sigmoid, exact cost gradients.
//! * [`geometry`] – collocation grids, direction pairs, renormalization.
//! * [`problems`] – the boundary value problems, residual jets, cost and
//!   validation against the closed-form solutions.
//! * [`trainer`] – RProp with phase schedules.
//! * [`fdbaseline`] – finite-difference comparison and cost model.
//! * [`config`] – run configuration, presets and the text config format.

// NaN-rejecting `!(x > 0)` checks and index loops over jet coefficients are
// deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod exec;
pub mod fdbaseline;
pub mod geometry;
pub mod jets;
pub mod problems;
pub mod real;
pub mod slotnet;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
