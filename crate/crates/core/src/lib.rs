//! Blind multiscale kernel-based nonlinear spectral unmixing.
//!
//! The crate estimates fractional abundances and a nonlinear residual
//! spectrum for every pixel of a hyperspectral image, given the endmember
//! signatures. Besides the two-scale blind algorithm ([`unmixers::bmua_n`])
//! it ships the FCLS and K-Hype baselines, a synthetic scene generator and
//! the usual evaluation metrics.

// `!(x > 0.0)` also rejects NaN, which is the point
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data_model;
pub mod dual_solver;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod multiscale;
pub mod simulation;
pub mod statistics;
pub mod unmixers;

pub use error::{Result, UnmixError};
