//! Design and verification of Bloch-oscillation large-momentum-transfer pulses.
//!
//! The crate is organised bottom-up: [`physconfig`] fixes species and the
//! recoil unit system, [`pulses`] builds the control waveforms, [`blochband`]
//! and [`wsspectrum`] provide the static spectra, [`adiabatic`] turns spectra
//! into losses and phases along a schedule, [`tdse`] integrates the full
//! Schrodinger equation for cross-checks and [`scanner`] drives parameter scans.

pub mod error;
pub mod numerics;
pub mod physconfig;
pub mod blochband;
pub mod pulses;
pub mod wsspectrum;
pub mod adiabatic;
pub mod tdse;
pub mod scanner;
pub mod scenario;

pub use error::{Error, Result};
pub use physconfig::{LaserSystem, SpeciesLattice};
