//! Empirical-Bayes inference of the true TLS count behind a number of
//! detections, and conversion to a density with credible intervals.

mod density;
mod likelihood;
mod posterior;
mod rates;

pub use density::{aggregate_device, density, DensityEstimate, DeviceSummary};
pub use likelihood::{
    detection_likelihood, ln_detection_likelihood, ln_marginal_likelihood, marginal_likelihood, mle_lambda,
};
pub use posterior::{central_interval, posterior, InferenceInput, PosteriorDensity, CREDIBLE_MASS};
pub use rates::{true_rates, DetectorRates};
