//! Reflected multivalued SDEs, backward stochastic variational inequalities
//! and the averaging experiments built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! * [`rng`] – counter-based Gaussian streams and Monte Carlo estimators.
//! * [`domain`] – convex domains `O = {phi > 0}` with inward normal and projection.
//! * [`potential`] – convex potentials, proximal maps, Moreau envelopes and the
//!   composite resolvent used by the backward scheme.
//! * [`coefficients`] – time-dependent coefficient sets, their time averages and
//!   an empirical assumption auditor.
//! * [`forward`] – projected Euler simulation of the reflected forward system.
//! * [`backward`] – least-squares Monte Carlo solver for the backward inequality.
//! * [`harness`] – end-to-end convergence sweeps and value grids.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod coefficients;
pub mod domain;
pub mod error;
pub mod forward;
pub mod harness;
pub mod potential;
pub mod rng;

pub use error::{Error, Result};
