//! Unit conversions at the configuration boundary.
//!
//! Internally every Hamiltonian entry is an angular frequency in rad/ns and
//! every time is in ns (ħ = 1). Configuration files and CSV output use
//! cyclic frequencies in GHz or MHz.

use std::f64::consts::TAU;

pub fn ghz(f: f64) -> f64 {
    TAU * f
}

pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e-3
}

pub fn to_mhz(omega: f64) -> f64 {
    omega / TAU * 1e3
}

pub fn to_ghz(omega: f64) -> f64 {
    omega / TAU
}

/// Rates given as a lifetime in µs, returned in 1/ns.
pub fn rate_from_us(lifetime_us: f64) -> f64 {
    1.0 / (lifetime_us * 1e3)
}
