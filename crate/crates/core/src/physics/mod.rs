//! Forward models of the flux-tunable resonator, with and without a coupled
//! two-level defect, and a virtual instrument that measures them.

pub mod constants;
mod flux;
mod resonator;
mod scenario;

pub use flux::{bias_plan, flux_to_freq, FluxConfig, FluxForm};
pub use resonator::{hanger_s21, thermal_population, tls_s21, ResonatorParams, ThermalConvention, TlsDefect};
pub use scenario::{synth_trace, virtual_measure, Instrument, Scenario, VirtualInstrument, DEFECT_REACH_KAPPA};
