//! Shared fixtures for the propagation benchmarks.

use chiralsim_core::dynamics::uniform_grid;
use chiralsim_core::{reference_ring, DeviceSpec};

/// The three-qubit ring at a quarter flux quantum.
pub fn ring(levels: usize) -> DeviceSpec {
    reference_ring().with_levels(levels).with_flux(std::f64::consts::FRAC_PI_2).expect("preset ring accepts any flux")
}

pub fn grid(duration: f64) -> Vec<f64> {
    uniform_grid(duration, 1.0)
}
