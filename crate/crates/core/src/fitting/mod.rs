//! Separating resonance from background, fitting the hanger model and
//! scoring how well it fits.

pub mod background;
mod hanger_fit;
mod parabola;
mod residual;
pub mod savgol;
mod snr;
pub mod trace;

pub use background::{background_split, BackgroundSplit};
pub use hanger_fit::{fit_hanger, fit_hanger_with, initial_guess, FitOptions, FitResult};
pub use parabola::{fit_flux_parabola, FluxParabola};
pub use residual::{residual_metric, residual_metric_of};
pub use snr::{estimate_snr, SNR_CAP};
pub use trace::{linear_grid, Trace, MIN_TRACE_POINTS};
