//! Two-stage nonparametric density estimation.
//!
//! The estimator first turns density estimation into regression: an
//! undersmoothed product-kernel density estimate, built on one half of the
//! sample, is evaluated at the other half to produce noisy pseudo-responses.
//! A sparse ReLU network is then fitted to those pairs by penalized least
//! squares. The crate also carries the synthetic density suite used to
//! benchmark the method (Bayesian-network and D-vine copula densities), the
//! cross-validation calibration of bandwidth constants, closed-form rate and
//! entropy evaluators, Monte-Carlo checks of the probabilistic bounds the
//! method relies on, and a config-driven experiment harness with a CLI.
//!
//! Module map:
//!
//! - [`kernels`]: compactly supported polynomial kernels of arbitrary order.
//! - [`kde`]: product-kernel density estimation, bandwidth rules, response
//!   generation and cross-validated bandwidth constants.
//! - [`densities`]: the synthetic density suite (evaluation and sampling).
//! - [`network`]: the from-scratch sparse ReLU network and its trainer.
//! - [`twostage`]: the SD / FD / KDE estimators and their risk evaluation.
//! - [`theorycheck`]: quadrature and Monte-Carlo checks of the noise bounds.
//! - [`harness`]: experiment configs, runner, summaries and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod densities;
pub mod error;
pub mod harness;
pub mod kde;
pub mod kernels;
pub mod network;
pub mod quadrature;
pub mod rng;
pub mod theorycheck;
pub mod twostage;

pub use dataset::Dataset;
pub use densities::{DensityModel, ModelDescriptor};
pub use error::{Error, Result};
pub use kde::BandwidthRule;
pub use kernels::KernelSpec;
pub use network::{NetworkArchitecture, NetworkParams};
pub use twostage::{EstimatorHandle, Method, RiskReport};
