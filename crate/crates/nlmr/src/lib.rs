//! Nonlinear instrumental-variable estimation for Mendelian randomization.
//!
//! The crate estimates the effect of an exposure `X` on an outcome `Y` using
//! genetic instruments `Z` and measured covariates `C`, when the causal
//! relationship may be nonlinear and exposure and outcome share unmeasured
//! confounders. It provides:
//!
//! - two-stage prediction and control-function estimators for outcome models
//!   built from named transforms of the exposure ([`estimators`]);
//! - sandwich covariance estimators that account for the estimated first
//!   stage, Wald/F tests, and tail probabilities for weighted chi-square
//!   mixtures ([`inference`]);
//! - a semiparametric estimator of the full exposure-outcome curve using
//!   penalized B-splines with GCV-selected smoothing, plus a significance
//!   test with fractional degrees of freedom ([`spmr`]);
//! - support for invalid (pleiotropic) instruments, nonlinear confounding
//!   through the first-stage residual, and binary outcomes;
//! - a deterministic simulation harness with counter-based random streams
//!   ([`simkit`]);
//! - CSV/TOML/JSON front ends and a small CLI ([`config`], [`io`], [`runner`]).
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --example two_stage_prediction     # parametric 2-stage fit + F test
//! cargo run --example control_function          # control-function fit, SE comparison
//! cargo run --example pleiotropy_adjustment     # invalid instrument correction
//! cargo run --example nonlinear_confounding     # nonlinear residual term h
//! cargo run --example binary_outcome            # logistic control function
//! cargo run --example semiparametric_curve      # penalized-spline curve + test
//! cargo run --example simulation_study          # Monte Carlo coverage/power
//! cargo run --example csv_workflow              # file-based pipeline
//! ```
//!
//! The `nlmr` binary exposes the same pipelines as `fit`, `simulate` and
//! `curve` subcommands driven by a TOML config; see the README.

pub mod basis;
pub mod config;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod linmod;
pub mod rng;
pub mod runner;
pub mod simkit;
pub mod spmr;
pub mod transform;

pub use data::{DataSet, Family};
pub use error::{Error, Result};
pub use transform::Transform;
