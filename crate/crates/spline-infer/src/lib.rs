//! Penalized smoothing-spline regression with asymptotic inference.
//!
//! The crate fits the penalized estimator
//!
//! ```text
//! g_hat = argmax over g of  (1/n) sum_i l(y_i; g(z_i)) - (lambda/2) J(g, g)
//! ```
//!
//! in an eigenbasis that simultaneously diagonalizes the variance form and
//! the roughness penalty, and builds four inference procedures on top of the
//! fit: pointwise confidence intervals, a local likelihood-ratio test for
//! `g(z0) = w0`, a simultaneous confidence band, and a penalized
//! likelihood-ratio test for simple and composite global hypotheses. A
//! seeded Monte Carlo harness reproduces coverage and power experiments.
//!
//! Start with the runnable programs under `examples/`; each demonstrates one
//! capability end to end.

pub mod bspline;
pub mod cli;
pub mod eigenbasis;
pub mod fitter;
pub mod inference;
pub mod models;
pub mod quad;
pub mod simharness;

pub use eigenbasis::{asymptotic_il, default_truncation, EigenSystem, KernelEval, SpectralSums};
pub use fitter::{fit, fit_constrained, select_lambda, sigma_hat, Dataset, FittedSpline};
pub use inference::{
    equivalent_kernel_omega0, local_lrt, plrt, plrt_composite, pointwise_ci, scb, BandResult,
    Calibration, DnMode, IntervalMethod, IntervalResult, TestResult,
};
pub use models::ModelFamily;
