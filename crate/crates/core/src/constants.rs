//! CODATA 2018 constants in SI units.

use serde::{Deserialize, Serialize};

/// Physical constants used throughout the crate.
///
/// `hbar` is derived from the exact `h`, so `h == 2π·hbar` holds to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Vacuum permeability (T·m/A).
    pub mu0: f64,
    /// Bohr magneton (J/T).
    pub mu_b: f64,
    /// Reduced Planck constant (J·s).
    pub hbar: f64,
    /// Planck constant (J·s).
    pub h: f64,
    /// Electron g factor. Locked to 2 by default.
    pub g_factor: f64,
}

const PLANCK: f64 = 6.626_070_15e-34;

impl PhysicalConstants {
    pub const CODATA_2018: PhysicalConstants = PhysicalConstants {
        mu0: 1.256_637_062_12e-6,
        mu_b: 9.274_010_078_3e-24,
        hbar: PLANCK / (2.0 * std::f64::consts::PI),
        h: PLANCK,
        g_factor: 2.0,
    };

    /// Magneton scaled by g/2; equals `mu_b` for g = 2.
    ///
    /// Every `2 μ_B` in the moment density becomes `g μ_B = 2·effective_magneton`.
    pub fn effective_magneton(&self) -> f64 {
        0.5 * self.g_factor * self.mu_b
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA_2018
    }
}

/// The constants every computation in this crate uses.
pub const CONSTANTS: PhysicalConstants = PhysicalConstants::CODATA_2018;

/// Crystal-field splitting of the NV⁻ ground state (Hz).
pub const D_GS_HZ: f64 = 2.87e9;

/// Electron volt (J).
pub const ELECTRON_VOLT: f64 = 1.602_176_634e-19;
