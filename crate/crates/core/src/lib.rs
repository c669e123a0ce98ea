//! Detection of two-level-system defects in flux-tunable Josephson-junction
//! array resonators, and the statistics built on top of the detections.
//!
//! The pipeline runs: simulate or measure S21 traces across a flux sweep
//! ([`physics`]), fit the hanger model to each trace ([`fitting`]), calibrate a
//! residual threshold and find TLS peaks ([`detector`]), turn detection counts
//! into a TLS density with credible intervals ([`bayes`]), and compare densities
//! across fabrication treatments and microstructure metrics ([`stats`]).

pub mod bayes;
pub mod detector;
pub mod error;
pub mod fitting;
pub mod io;
pub mod physics;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use fitting::{FitResult, Trace};
pub use physics::{ResonatorParams, Scenario, TlsDefect};
