//! CODATA constants, 10 significant digits.

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649_000e-23;
/// Magnetic flux quantum h/2e (Wb).
pub const FLUX_QUANTUM: f64 = 2.067_833_848e-15;
/// One GHz in Hz.
pub const GHZ: f64 = 1.0e9;
