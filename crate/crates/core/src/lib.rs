//! Simulation of synthetic-flux photon circulation in small rings of
//! parametrically coupled transmon qubits.

pub mod device;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod gauge;
pub mod hamiltonian;
pub mod io;
pub mod observables;
pub mod units;

pub use device::{reference_ring, DeviceSpec, LinkSpec, SiteSpec};
pub use error::{Error, Result};
pub use fock::{BasisTag, CMatrix, CVector, DensityMatrix, FockBasis, Operator, QuantumState, StateVector, C64};
pub use gauge::Graph;
pub use hamiltonian::{Eigensystem, Generator};
pub use experiments::{ExperimentResult, Frame, Layout};
pub use io::RunManifest;
