//! Probe geometry: the spin sits at the origin of region I, region II fills
//! the half-space `z > d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::SpinDensityProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    /// Spin-to-interface distance (m).
    #[serde(rename = "d_m")]
    pub d: f64,
    /// Relative permeability of the region containing the spin.
    #[serde(rename = "mu_r_I")]
    pub mu_r1: f64,
    /// Relative permeability of the half-space `z > d`.
    #[serde(rename = "mu_r_II")]
    pub mu_r2: f64,
    /// Total spin quantum number J (half-integer ≥ 1/2).
    #[serde(rename = "J")]
    pub spin: f64,
    /// Tilt of the spin moment from the interface normal (rad).
    #[serde(rename = "eta_rad")]
    pub eta: f64,
}

impl ProbeGeometry {
    pub fn new(d: f64, mu_r1: f64, mu_r2: f64, spin: f64, eta: f64) -> Result<Self> {
        let g = Self {
            d,
            mu_r1,
            mu_r2,
            spin,
            eta,
        };
        g.validate()?;
        Ok(g)
    }

    /// Spin-1 probe in vacuum facing a material of permeability `mu_r2`.
    pub fn nv(d: f64, mu_r2: f64) -> Result<Self> {
        Self::new(d, 1.0, mu_r2, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "distance must be positive, got {}",
                self.d
            )));
        }
        if !(self.mu_r1.is_finite() && self.mu_r1 > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "mu_r_I must be positive, got {}",
                self.mu_r1
            )));
        }
        if !(self.mu_r2.is_finite() && self.mu_r2 >= 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "mu_r_II must be non-negative, got {}",
                self.mu_r2
            )));
        }
        validate_spin(self.spin)?;
        if !(self.eta.is_finite() && self.eta.abs() <= std::f64::consts::PI + 1e-12) {
            return Err(Error::InvalidGeometry(format!(
                "tilt angle must lie in [-pi, pi], got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Checks the geometry and that the profile's support lies entirely in region I.
    pub fn validate_with(&self, profile: &SpinDensityProfile) -> Result<()> {
        self.validate()?;
        let extent = profile.support().z_extent();
        if self.d <= extent {
            return Err(Error::InvalidGeometry(format!(
                "distance {:e} m does not exceed the density support extent {:e} m",
                self.d, extent
            )));
        }
        Ok(())
    }

    /// (μ_II − μ_I)/(μ_II + μ_I).
    pub fn contrast(&self) -> f64 {
        (self.mu_r2 - self.mu_r1) / (self.mu_r2 + self.mu_r1)
    }

    pub fn with_distance(mut self, d: f64) -> Self {
        self.d = d;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_spin(mut self, spin: f64) -> Self {
        self.spin = spin;
        self
    }

    pub fn with_mu_r2(mut self, mu_r2: f64) -> Self {
        self.mu_r2 = mu_r2;
        self
    }
}

pub(crate) fn validate_spin(spin: f64) -> Result<()> {
    let twice = 2.0 * spin;
    if !(spin.is_finite() && spin >= 0.5 && (twice - twice.round()).abs() < 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "J must be a half-integer >= 1/2, got {spin}"
        )));
    }
    Ok(())
}

/// Permeability contrast Δμ_r = (μ_II − μ_I)/(μ_II + μ_I) ∈ [−1, 1].
pub fn permeability_contrast(geom: &ProbeGeometry) -> Result<f64> {
    let sum = geom.mu_r1 + geom.mu_r2;
    if sum == 0.0 {
        return Err(Error::InvalidGeometry("both permeabilities are zero".into()));
    }
    if !(geom.mu_r1 > 0.0) || geom.mu_r2 < 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "need mu_r_I > 0 and mu_r_II >= 0, got {} and {}",
            geom.mu_r1, geom.mu_r2
        )));
    }
    Ok((geom.mu_r2 - geom.mu_r1) / sum)
}
