//! Unit conventions.
//!
//! Stored frequencies and energies are linear frequencies in GHz and times are
//! in ns. Generators of time evolution are angular, so a frequency `f` enters
//! as `2π·f` rad/ns.

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Boltzmann constant over Planck constant, GHz per kelvin.
pub const KB_OVER_H_GHZ_PER_K: f64 = 20.8366;

pub fn mk_to_ghz(millikelvin: f64) -> f64 {
    millikelvin * 1e-3 * KB_OVER_H_GHZ_PER_K
}

pub fn angular(freq_ghz: f64) -> f64 {
    TWO_PI * freq_ghz
}
