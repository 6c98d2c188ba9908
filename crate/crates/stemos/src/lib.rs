//! Statistical calibration of ensemble numerical weather prediction wind
//! forecasts.
//!
//! Raw ensemble wind forecasts are biased and underdispersive. This crate
//! fits a hierarchy of six calibration models that regress observed wind on
//! ensemble summary statistics and site covariates inside a censored,
//! Box-Cox-transformed Gaussian spatiotemporal field:
//!
//! * static coefficients: `Mos` (independent sites), `Gop` (spatially
//!   correlated errors), `Semos` (ensemble-spread-dependent error scale);
//! * time-varying coefficients via discounted dynamic linear models:
//!   `Dmos`, `Dgop`, `Stemos`.
//!
//! Inference is fully Bayesian: forward filtering backward sampling for the
//! state path, single-site Gibbs augmentation of censored cells, and a
//! robust adaptive Metropolis step for the static parameters (decay range,
//! Box-Cox exponent, spread coefficients). The fitted models produce
//! probabilistic forecasts at stations and on grids (kriging), and the
//! scoring module evaluates them with MAE, RMSE and its bias/amplitude/phase
//! decomposition, interval score, Willmott agreement, rank histograms, DIC
//! and LPML.
//!
//! The `simulate` module generates synthetic station networks and ensembles
//! with known mechanisms (static truth, drifting coefficients,
//! spread-modulated noise) used by the acceptance suite to check that the
//! model ranking behaves as designed.

pub mod calibrators;
pub mod cli;
pub mod dlm;
pub mod domain;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod mcmc;
pub mod scoring;
pub mod simulate;
pub mod spatial;
pub mod transform;

pub use error::{Error, Result};
