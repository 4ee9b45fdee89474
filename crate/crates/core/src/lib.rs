//! Qubit to boson to optical-photon transduction models.
//!
//! Frequencies and rates are angular (rad/s) throughout; Hamiltonians are in
//! units of ħ.

pub mod error;
pub mod fock;
pub mod hamiltonians;
pub mod lindblad;
pub mod moments;
pub mod params;
pub mod protocol;
pub mod wigner;

pub use error::{Error, Result};
