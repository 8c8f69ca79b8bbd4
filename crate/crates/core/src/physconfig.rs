//! Physical constants, species/lattice presets and the recoil unit system.
//!
//! Everything downstream works in recoil units: energies in `E_r`, lengths in
//! `1/k_L`, momenta in `hbar k_L` and times in `hbar/E_r`. An acceleration
//! enters as the dimensionless force `F = m a_L / (k_L E_r)`, so that the
//! tilt per lattice site is `d m a_L = pi F` and the Bloch period is `2/F`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Reduced Planck constant (J s), exact SI value.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Standard gravity (m/s^2).
pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Atomic species together with the lattice geometry it is held in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeciesLattice {
    /// kg
    pub atom_mass: f64,
    /// m
    pub lattice_wavelength: f64,
    /// m
    pub transition_wavelength: f64,
    /// rad/s
    pub natural_linewidth: f64,
    /// rad/s
    pub resonance_frequency: f64,
    /// rad/s, positive for blue detuning
    pub detuning: f64,
}

impl SpeciesLattice {
    /// Rb-87 on the D2 line; the lattice sits just blue of the transition.
    pub fn rb87() -> Self {
        Self::from_wavelengths(1.443_160_648e-25, 780.24e-9, 780.241_209_686e-9, 2.0 * PI * 6.0666e6)
    }

    /// Cs-133 on the D2 line in a 943 nm lattice.
    pub fn cs133() -> Self {
        Self::from_wavelengths(2.206_946_57e-25, 943.0e-9, 852.347_275_82e-9, 2.0 * PI * 5.234e6)
    }

    /// Builds a configuration whose resonance frequency and detuning follow
    /// from the two wavelengths.
    pub fn from_wavelengths(
        atom_mass: f64,
        lattice_wavelength: f64,
        transition_wavelength: f64,
        natural_linewidth: f64,
    ) -> Self {
        let resonance_frequency = 2.0 * PI * SPEED_OF_LIGHT / transition_wavelength;
        let laser = 2.0 * PI * SPEED_OF_LIGHT / lattice_wavelength;
        SpeciesLattice {
            atom_mass,
            lattice_wavelength,
            transition_wavelength,
            natural_linewidth,
            resonance_frequency,
            detuning: laser - resonance_frequency,
        }
    }

    /// Same species with a different lattice wavelength (detuning follows).
    pub fn with_lattice_wavelength(mut self, lattice_wavelength: f64) -> Self {
        self.lattice_wavelength = lattice_wavelength;
        self.detuning = 2.0 * PI * SPEED_OF_LIGHT / lattice_wavelength - self.resonance_frequency;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("atom_mass", self.atom_mass),
            ("lattice_wavelength", self.lattice_wavelength),
            ("transition_wavelength", self.transition_wavelength),
            ("natural_linewidth", self.natural_linewidth),
            ("resonance_frequency", self.resonance_frequency),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {value}")));
            }
        }
        if !self.detuning.is_finite() {
            return Err(invalid("detuning", "must be finite"));
        }
        Ok(())
    }

    /// Lattice constant `d = lambda/2` (m).
    pub fn lattice_constant(&self) -> f64 {
        self.lattice_wavelength / 2.0
    }

    /// Lattice wave number `k_L = pi/d` (1/m).
    pub fn wave_number(&self) -> f64 {
        PI / self.lattice_constant()
    }

    /// Recoil energy `hbar^2 k_L^2 / 2m` in joule.
    pub fn recoil_energy(&self) -> f64 {
        let hk = HBAR * self.wave_number();
        hk * hk / (2.0 * self.atom_mass)
    }

    /// `E_r / hbar` in rad/s.
    pub fn recoil_rate(&self) -> f64 {
        self.recoil_energy() / HBAR
    }

    /// The recoil time unit `hbar/E_r` in seconds.
    pub fn time_unit(&self) -> f64 {
        HBAR / self.recoil_energy()
    }

    pub fn energy_to_recoil(&self, joule: f64) -> f64 {
        joule / self.recoil_energy()
    }

    pub fn energy_to_joule(&self, recoil: f64) -> f64 {
        recoil * self.recoil_energy()
    }

    pub fn time_to_recoil(&self, seconds: f64) -> f64 {
        seconds / self.time_unit()
    }

    pub fn time_to_seconds(&self, recoil: f64) -> f64 {
        recoil * self.time_unit()
    }

    /// Dimensionless force `m a_L / (k_L E_r)` for an acceleration in m/s^2.
    pub fn force(&self, accel: f64) -> f64 {
        self.atom_mass * accel / (self.wave_number() * self.recoil_energy())
    }

    /// Inverse of [`force`](Self::force).
    pub fn acceleration(&self, force: f64) -> f64 {
        force * self.wave_number() * self.recoil_energy() / self.atom_mass
    }

    /// Tilt energy per lattice site `d m a_L` in units of `E_r`.
    pub fn site_tilt(&self, accel: f64) -> f64 {
        PI * self.force(accel)
    }

    /// Velocity of one photon-pair recoil `hbar k_L / m` (m/s).
    pub fn recoil_velocity(&self) -> f64 {
        HBAR * self.wave_number() / self.atom_mass
    }

    /// Bloch period `2 hbar k_L / (m a_L)` in seconds.
    pub fn bloch_period(&self, accel: f64) -> Result<f64> {
        if !(accel > 0.0) || !accel.is_finite() {
            return Err(Error::Domain(format!("Bloch period undefined for a_L = {accel} m/s^2")));
        }
        Ok(2.0 * self.recoil_velocity() / accel)
    }

    /// Number of Bloch oscillations `m a_L T / (2 hbar k_L)` completed in `duration` seconds.
    pub fn oscillation_count(&self, accel: f64, duration: f64) -> Result<f64> {
        if !(duration >= 0.0) {
            return Err(invalid("duration", format!("must be >= 0, got {duration}")));
        }
        Ok(duration / self.bloch_period(accel)?)
    }

    /// Time needed for `n` Bloch oscillations at constant `accel`.
    pub fn acceleration_time(&self, accel: f64, n: f64) -> Result<f64> {
        Ok(n * self.bloch_period(accel)?)
    }

    /// Lattice wavelength for which `n` oscillations at `accel` take `duration`.
    pub fn wavelength_for_count(&self, accel: f64, duration: f64, n: f64) -> Result<f64> {
        if !(accel > 0.0 && duration > 0.0 && n > 0.0) {
            return Err(Error::Domain("wavelength inversion needs a_L, T, N > 0".into()));
        }
        // N = m a T lambda / (4 pi hbar)
        Ok(4.0 * PI * HBAR * n / (self.atom_mass * accel * duration))
    }
}

/// Laser beam delivering the lattice light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserSystem {
    /// W
    pub power: f64,
    /// m
    pub waist: f64,
}

impl LaserSystem {
    pub fn new(power: f64, waist: f64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(invalid("power", format!("must be > 0, got {power}")));
        }
        if !(waist > 0.0 && waist.is_finite()) {
            return Err(invalid("waist", format!("must be > 0, got {waist}")));
        }
        Ok(LaserSystem { power, waist })
    }

    /// 1.2 W, 3.75 mm waist.
    pub fn gebbe() -> Self {
        LaserSystem { power: 1.2, waist: 3.75e-3 }
    }

    /// 6 W, 1 mm waist.
    pub fn kim() -> Self {
        LaserSystem { power: 6.0, waist: 1.0e-3 }
    }

    /// Peak intensity `2P / (pi w^2)` in W/m^2.
    pub fn intensity(&self) -> f64 {
        2.0 * self.power / (PI * self.waist * self.waist)
    }
}
