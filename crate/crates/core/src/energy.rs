//! Classical magnetic energy, the spin-Hamiltonian coefficient D_mag for
//! spherical densities, and spin expectation values.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::geometry::{permeability_contrast, validate_spin, ProbeGeometry};
use crate::profile::{radial_integral, SpinDensityProfile};
use crate::quad::QuadratureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagneticEnergyBreakdown {
    /// Energy of the spin's own field (J). Diverges as R → 0 and depends on
    /// the regularizing density, so it is never used for sensing outputs.
    pub self_energy: f64,
    /// Energy change due to region II (J).
    pub image_energy: f64,
    pub eta: f64,
    pub total: f64,
}

impl MagneticEnergyBreakdown {
    pub const SELF_ENERGY_REGULARIZATION_DEPENDENT: bool = true;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DMethod {
    #[serde(rename = "sphericalClosedForm")]
    SphericalClosedForm,
    #[serde(rename = "cylindricalSeries")]
    CylindricalSeries,
    #[serde(rename = "oracleQuadrature")]
    OracleQuadrature,
}

impl DMethod {
    pub fn label(&self) -> &'static str {
        match self {
            DMethod::SphericalClosedForm => "sphericalClosedForm",
            DMethod::CylindricalSeries => "cylindricalSeries",
            DMethod::OracleQuadrature => "oracleQuadrature",
        }
    }
}

/// A fine-structure coefficient with its provenance and error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveD {
    pub value_hz: f64,
    pub method: DMethod,
    pub error_estimate_hz: f64,
    pub geometry: ProbeGeometry,
    pub converged: bool,
}

/// μ₀ μ_r^I μ_eff² (J·m³).
fn energy_scale(geom: &ProbeGeometry) -> f64 {
    let mu = CONSTANTS.effective_magneton();
    CONSTANTS.mu0 * geom.mu_r1 * mu * mu
}

/// `∫₀^R P(r)² r² dr` (m⁻³).
pub fn self_energy_integral(profile: &SpinDensityProfile) -> Result<f64> {
    let radial = profile.radial()?;
    let cfg = QuadratureConfig {
        abs_tol: 0.0,
        ..QuadratureConfig::default()
    };
    Ok(radial_integral(profile, |r| radial.value(r).powi(2) * r * r, &cfg)?.value)
}

/// Image term Δμ_r μ₀μ_r^I μ_B² J²/(32π d³)·(3 + cos 2η).
pub fn image_energy(geom: &ProbeGeometry) -> Result<f64> {
    geom.validate()?;
    let dm = permeability_contrast(geom)?;
    let j2 = geom.spin * geom.spin;
    Ok(dm * energy_scale(geom) * j2 / (32.0 * PI * geom.d.powi(3)) * (3.0 + (2.0 * geom.eta).cos()))
}

/// Classical magnetic energy split into self and image parts.
///
/// Both terms carry J² so that the large-J limit of the quantum expectation
/// value reproduces this breakdown term by term.
pub fn classical_energy(profile: &SpinDensityProfile, geom: &ProbeGeometry) -> Result<MagneticEnergyBreakdown> {
    profile.radial()?;
    geom.validate_with(profile)?;
    let j2 = geom.spin * geom.spin;
    let self_energy = 16.0 * PI / 3.0 * energy_scale(geom) * j2 * self_energy_integral(profile)?;
    let image = image_energy(geom)?;
    Ok(MagneticEnergyBreakdown {
        self_energy,
        image_energy: image,
        eta: geom.eta,
        total: self_energy + image,
    })
}

/// Generalized force −∂E_image/∂d = 3·E_image/d (N). Its magnitude is the
/// force along ẑ between the spin and the half-space.
pub fn image_energy_force(profile: &SpinDensityProfile, geom: &ProbeGeometry) -> Result<f64> {
    let e = classical_energy(profile, geom)?;
    Ok(3.0 * e.image_energy / geom.d)
}

/// D_mag = Δμ_r μ₀ μ_r^I μ_B² / (16π d³ h), independent of the density profile.
pub fn d_mag_spherical(geom: &ProbeGeometry) -> Result<EffectiveD> {
    geom.validate()?;
    let dm = permeability_contrast(geom)?;
    let value = dm * energy_scale(geom) / (16.0 * PI * geom.d.powi(3) * CONSTANTS.h);
    Ok(EffectiveD {
        value_hz: value,
        method: DMethod::SphericalClosedForm,
        error_estimate_hz: 4.0 * f64::EPSILON * value.abs(),
        geometry: *geom,
        converged: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmagExpectation {
    pub self_part: f64,
    pub image_part: f64,
    pub total: f64,
}

/// ⟨J,J|H_mag|J,J⟩ for the spin polarized along the tilted axis (J):
/// the self term plus Δμ_r μ₀μ_r^I μ_B² J²/(32π d³)·(3 + cos 2η + (1 − cos 2η)/(2J)).
pub fn h_mag_expectation(profile: &SpinDensityProfile, geom: &ProbeGeometry) -> Result<HmagExpectation> {
    validate_spin(geom.spin)?;
    profile.radial()?;
    geom.validate_with(profile)?;
    let dm = permeability_contrast(geom)?;
    let j = geom.spin;
    let c2 = (2.0 * geom.eta).cos();
    let self_part = 16.0 / 3.0 * energy_scale(geom) * j * j * PI * self_energy_integral(profile)?;
    let image_part =
        energy_scale(geom) * j * j / (32.0 * PI * geom.d.powi(3)) * dm * (3.0 + c2 + (1.0 - c2) / (2.0 * j));
    Ok(HmagExpectation {
        self_part,
        image_part,
        total: self_part + image_part,
    })
}

/// Spin-1 state cos²(η/2)|+1⟩ + (√2/2) sin η |0⟩ + sin²(η/2)|−1⟩ in the (+1, 0, −1) basis.
pub fn tilted_spin_one_state(eta: f64) -> Vector3<f64> {
    let (s, c) = (0.5 * eta).sin_cos();
    Vector3::new(c * c, std::f64::consts::FRAC_1_SQRT_2 * eta.sin(), s * s)
}

/// ⟨J_η|D·J_z²|J_η⟩ (Hz) by explicit matrix algebra; equals D(3 + cos 2η)/4.
pub fn nv_superposition_energy(d_hz: f64, eta: f64) -> f64 {
    let psi = tilted_spin_one_state(eta);
    let jz2 = Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 1.0));
    d_hz * psi.dot(&(jz2 * psi)) / psi.norm_squared()
}

pub const DMAG_SWEEP_CSV_HEADER: &str = "d_m,mu_r_II,D_mag_Hz,method,err_Hz";

/// D_mag over every (d, μ_r^II) pair, d varying fastest.
pub fn d_mag_sweep(base: &ProbeGeometry, distances: &[f64], mu_r2: &[f64]) -> Result<Vec<EffectiveD>> {
    if distances.is_empty() || mu_r2.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one distance and one permeability".into(),
        ));
    }
    let mut out = Vec::with_capacity(distances.len() * mu_r2.len());
    for &mu in mu_r2 {
        for &d in distances {
            out.push(d_mag_spherical(&base.with_distance(d).with_mu_r2(mu))?);
        }
    }
    Ok(out)
}

pub fn d_mag_sweep_csv(rows: &[EffectiveD]) -> String {
    let mut out = String::from(DMAG_SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:e},{},{:e},{},{:e}\n",
            r.geometry.d,
            r.geometry.mu_r2,
            r.value_hz,
            r.method.label(),
            r.error_estimate_hz
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::RadialTable;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    const NM: f64 = 1e-9;

    fn nv(d: f64, mu2: f64, eta: f64) -> ProbeGeometry {
        ProbeGeometry::new(d, 1.0, mu2, 1.0, eta).unwrap()
    }

    fn bessel() -> SpinDensityProfile {
        SpinDensityProfile::spherical_bessel(0.25 * NM).unwrap()
    }

    #[test]
    fn zero_contrast_has_no_image_energy() {
        let e = classical_energy(&bessel(), &nv(NM, 1.0, 0.3)).unwrap();
        assert_eq!(e.image_energy, 0.0);
        assert_eq!(e.total, e.self_energy);
        assert_eq!(image_energy_force(&bessel(), &nv(NM, 1.0, 0.3)).unwrap(), 0.0);
    }

    #[test]
    fn self_energy_matches_midpoint_rule() {
        // ∫ j₀⁴ r² dr involves the sine integral; compare with a fine midpoint rule
        let p = bessel();
        let v = p.radial().unwrap();
        let n = 200_000;
        let h = 0.25 * NM / n as f64;
        let riemann: f64 = (0..n)
            .map(|i| {
                let r = (i as f64 + 0.5) * h;
                v.value(r).powi(2) * r * r * h
            })
            .sum();
        let q = self_energy_integral(&p).unwrap();
        assert!((q - riemann).abs() < 1e-8 * q);
    }

    #[test]
    fn geometry_inside_support_is_rejected() {
        let p = SpinDensityProfile::spherical_bessel(2.0 * NM).unwrap();
        assert!(matches!(
            classical_energy(&p, &nv(NM, 0.0, 0.0)),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn superconductor_reference_values() {
        let d = d_mag_spherical(&nv(NM, 0.0, 0.0)).unwrap();
        assert!((d.value_hz + 3.2449e6).abs() < 1e3, "{}", d.value_hz);
        let e0 = image_energy(&nv(NM, 0.0, 0.0)).unwrap();
        let e90 = image_energy(&nv(NM, 0.0, PI / 2.0)).unwrap();
        assert!(((e0 - e90).abs() - 2.150e-27).abs() < 1e-30);
    }

    #[test]
    fn force_matches_finite_difference() {
        let p = bessel();
        let g = nv(NM, 0.0, 0.4);
        let f = image_energy_force(&p, &g).unwrap();
        let h = 1e-4 * NM;
        let e = |d: f64| classical_energy(&p, &g.with_distance(d)).unwrap().image_energy;
        let fd = -(e(NM + h) - e(NM - h)) / (2.0 * h);
        let fd4 = -(8.0 * (e(NM + h) - e(NM - h)) - (e(NM + 2.0 * h) - e(NM - 2.0 * h))) / (12.0 * h);
        assert!((f - fd4).abs() < 1e-8 * f.abs(), "{f} {fd4} {fd}");
    }

    #[test]
    fn d_mag_scales_with_inverse_cube() {
        let a = d_mag_spherical(&nv(NM, 0.3, 0.0)).unwrap().value_hz;
        let b = d_mag_spherical(&nv(2.0 * NM, 0.3, 0.0)).unwrap().value_hz;
        assert!((a / b - 8.0).abs() < 1e-13);
        let ds: Vec<f64> = (0..=20).map(|i| NM * 10f64.powf(i as f64 / 10.0)).collect();
        let slopes: Vec<f64> = ds
            .windows(2)
            .map(|w| {
                let da = d_mag_spherical(&nv(w[0], 0.0, 0.0)).unwrap().value_hz.abs();
                let db = d_mag_spherical(&nv(w[1], 0.0, 0.0)).unwrap().value_hz.abs();
                (db.ln() - da.ln()) / (w[1].ln() - w[0].ln())
            })
            .collect();
        assert!(slopes.iter().all(|s| (s + 3.0).abs() < 1e-6));
    }

    #[test]
    fn d_mag_is_profile_independent() {
        let n = 300;
        let r: Vec<f64> = (0..=n).map(|i| 0.3 * NM * i as f64 / n as f64).collect();
        let s: Vec<f64> = r.iter().map(|&x| (1.0 - (x / (0.3 * NM)).powi(2)).max(0.0)).collect();
        let table = SpinDensityProfile::custom_radial(RadialTable::new(r, s).unwrap()).unwrap();
        let g = nv(NM, 0.0, 0.5);
        table.radial().unwrap();
        g.validate_with(&table).unwrap();
        g.validate_with(&bessel()).unwrap();
        let a = d_mag_spherical(&g).unwrap();
        assert_eq!(a.value_hz, d_mag_spherical(&g).unwrap().value_hz);
        let ea = classical_energy(&bessel(), &g).unwrap().image_energy;
        let eb = classical_energy(&table, &g).unwrap().image_energy;
        assert!((ea - eb).abs() <= 1e-9 * ea.abs());
    }

    #[test]
    fn image_energy_is_a_plus_b_cos_two_eta() {
        let etas: Vec<f64> = (0..50).map(|i| PI * i as f64 / 49.0).collect();
        let y = DVector::from_iterator(50, etas.iter().map(|&e| image_energy(&nv(NM, 0.0, e)).unwrap()));
        let a = DMatrix::from_fn(50, 2, |i, k| if k == 0 { 1.0 } else { (2.0 * etas[i]).cos() });
        let coef = a.clone().svd(true, true).solve(&y, 1e-15).unwrap();
        let resid = (&a * &coef - &y).amax();
        assert!(resid <= 1e-12 * y.amax());
        assert!((coef[0] / coef[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn nv_superposition_examples() {
        assert!((nv_superposition_energy(1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((nv_superposition_energy(1.0, PI / 2.0) - 0.5).abs() < 1e-15);
        assert!((nv_superposition_energy(1.0, PI / 3.0) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn spin_half_has_no_angular_dependence() {
        let p = bessel();
        let g = ProbeGeometry::new(NM, 1.0, 0.0, 0.5, 0.0).unwrap();
        let a = h_mag_expectation(&p, &g).unwrap().image_part;
        for eta in [0.3, 1.0, PI / 2.0, 2.5] {
            let b = h_mag_expectation(&p, &g.with_eta(eta)).unwrap().image_part;
            assert!((a - b).abs() < 1e-14 * a.abs());
        }
    }

    #[test]
    fn invalid_spin_is_rejected() {
        let g = ProbeGeometry {
            spin: 0.7,
            ..nv(NM, 0.0, 0.0)
        };
        assert!(matches!(
            h_mag_expectation(&bessel(), &g),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = d_mag_sweep(&nv(NM, 0.0, 0.0), &[NM, 2.0 * NM], &[0.0, 0.999992]).unwrap();
        let csv = d_mag_sweep_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], DMAG_SWEEP_CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].contains(",sphericalClosedForm,"));
    }

    proptest! {
        #[test]
        fn sign_follows_contrast(mu2 in 0.0f64..10.0, d in 0.5f64..50.0) {
            let v = d_mag_spherical(&nv(d * NM, mu2, 0.0)).unwrap().value_hz;
            let c = nv(d * NM, mu2, 0.0).contrast();
            prop_assert!(v.signum() == c.signum() || c == 0.0);
        }

        #[test]
        fn classical_limit_gap_shrinks_like_one_over_j(k in 1usize..200, eta in 0.1f64..3.0) {
            let spin = k as f64 + 0.5;
            let g = ProbeGeometry::new(NM, 1.0, 0.0, spin, eta).unwrap();
            let q = h_mag_expectation(&bessel(), &g).unwrap();
            let c = classical_energy(&bessel(), &g).unwrap();
            let gap = (q.image_part - c.image_energy).abs() / c.image_energy.abs();
            prop_assert!(gap <= 1.0 / (2.0 * spin) + 1e-15);
            prop_assert!((q.self_part - c.self_energy).abs() <= 1e-14 * c.self_energy);
        }

        #[test]
        fn superposition_shares_classical_angular_shape(eta in 0.0f64..PI) {
            let ratio_q = nv_superposition_energy(1.0, eta);
            let ratio_c = image_energy(&nv(NM, 0.0, eta)).unwrap() / image_energy(&nv(NM, 0.0, 0.0)).unwrap();
            prop_assert!((ratio_q - ratio_c).abs() < 1e-12);
        }
    }
}
