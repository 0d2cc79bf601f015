//! Spin probability densities: closed-form Bessel profiles and sampled tables.
//!
//! A profile is stored as an unnormalized shape `s(x)` times a normalization
//! constant `N`, so that `P(x) = N·s(x)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::interp::{pchip_eval, pchip_eval_by, MonotoneCubic};
use crate::quad::{integrate, Estimate, GaussLegendre, QuadratureConfig};
use crate::special::{bessel_j0, bessel_j1, spherical_j0, spherical_j0_prime, BESSEL_J0_FIRST_ZERO};

/// Radially symmetric density sampled at increasing radii starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTable {
    r: Vec<f64>,
    p: Vec<f64>,
    /// `∫₀^{r_i} s(r) r² dr` at every knot.
    cumulative: Vec<f64>,
}

impl RadialTable {
    /// Builds a table from samples. The support ends at the zero sample that
    /// follows the last nonzero one; trailing zeros beyond it are dropped.
    pub fn new(r: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if r.len() != p.len() {
            return Err(Error::InvalidProfile(
                "radius and value columns differ in length".into(),
            ));
        }
        if r.len() < 2 {
            return Err(Error::InvalidProfile("radial table needs at least two samples".into()));
        }
        if r[0] != 0.0 {
            return Err(Error::InvalidProfile("radial table must start at r = 0".into()));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProfile(
                "radii must be finite and strictly increasing".into(),
            ));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProfile(
                "density samples must be finite and non-negative".into(),
            ));
        }
        let last = p
            .iter()
            .rposition(|&v| v > 0.0)
            .ok_or_else(|| Error::InvalidProfile("density table is identically zero".into()))?;
        if last + 1 >= p.len() {
            return Err(Error::InvalidProfile(
                "density table must end with a zero sample marking the support boundary".into(),
            ));
        }
        let r = r[..last + 2].to_vec();
        let p = p[..last + 2].to_vec();
        let gl = GaussLegendre::new(3);
        let mut cumulative = Vec::with_capacity(r.len());
        cumulative.push(0.0);
        for i in 0..r.len() - 1 {
            let piece = gl.integrate(|t| pchip_eval(&r, &p, t).0 * t * t, r[i], r[i + 1]);
            cumulative.push(cumulative[i] + piece);
        }
        Ok(Self { r, p, cumulative })
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn support_radius(&self) -> f64 {
        *self.r.last().expect("non-empty")
    }

    fn eval(&self, r: f64) -> (f64, f64) {
        if r >= self.support_radius() {
            return (0.0, 0.0);
        }
        pchip_eval(&self.r, &self.p, r)
    }

    /// `∫₀^r s(t) t² dt`, exact for the piecewise cubic interpolant.
    fn enclosed(&self, r: f64) -> f64 {
        if r >= self.support_radius() {
            return *self.cumulative.last().expect("non-empty");
        }
        let i = self.r.partition_point(|&v| v <= r).saturating_sub(1);
        let gl = GaussLegendre::new(3);
        self.cumulative[i] + gl.integrate(|t| self.eval(t).0 * t * t, self.r[i], r)
    }
}

/// Axisymmetric density sampled on a (ρ, z ≥ 0) grid and mirrored to z < 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalTable {
    rho: Vec<f64>,
    z: Vec<f64>,
    /// Row-major samples: `values[iz][irho]`.
    values: Vec<Vec<f64>>,
    rows: Vec<MonotoneCubic>,
}

impl CylindricalTable {
    /// `rho` and `z` must start at 0 and increase strictly; the last column
    /// (ρ = R) and last row (z = H/2) must be zero.
    pub fn new(rho: Vec<f64>, z: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        for (name, axis) in [("rho", &rho), ("z", &z)] {
            if axis.len() < 2 || axis[0] != 0.0 {
                return Err(Error::InvalidProfile(format!(
                    "{name} axis must start at 0 with at least two samples"
                )));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProfile(format!(
                    "{name} axis must be finite and strictly increasing"
                )));
            }
        }
        if values.len() != z.len() || values.iter().any(|row| row.len() != rho.len()) {
            return Err(Error::InvalidProfile("value grid shape does not match the axes".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProfile(
                "density samples must be finite and non-negative".into(),
            ));
        }
        if values.iter().flatten().all(|&v| v == 0.0) {
            return Err(Error::InvalidProfile("density table is identically zero".into()));
        }
        let edge_nonzero = values.last().expect("non-empty").iter().any(|&v| v != 0.0)
            || values.iter().any(|row| *row.last().expect("non-empty") != 0.0);
        if edge_nonzero {
            return Err(Error::InvalidProfile(
                "density must vanish on the outer rho and z samples".into(),
            ));
        }
        let rows = values
            .iter()
            .map(|row| MonotoneCubic::new(rho.clone(), row.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rho, z, values, rows })
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn radius(&self) -> f64 {
        *self.rho.last().expect("non-empty")
    }

    pub fn half_height(&self) -> f64 {
        *self.z.last().expect("non-empty")
    }

    pub fn rho_knots(&self) -> &[f64] {
        &self.rho
    }

    pub fn z_knots(&self) -> &[f64] {
        &self.z
    }

    /// (s, ∂s/∂ρ, ∂s/∂z).
    fn eval(&self, rho: f64, z: f64) -> (f64, f64, f64) {
        let az = z.abs();
        if rho >= self.radius() || az >= self.half_height() {
            return (0.0, 0.0, 0.0);
        }
        let (s, ds_dz) = pchip_eval_by(&self.z, |j| self.rows[j].eval_with_derivative(rho).0, az);
        let (ds_drho, _) = pchip_eval_by(&self.z, |j| self.rows[j].eval_with_derivative(rho).1, az);
        (s, ds_drho, ds_dz * z.signum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileKind {
    /// `s(r) = j₀(πr/R)²` for `r < R`.
    SphericalBessel {
        radius: f64,
    },
    /// `s(ρ, z) = [J₀(j₀₁ρ/R) cos(πz/H)]²` for `ρ < R`, `|z| < H/2`.
    CylindricalBesselCosine {
        radius: f64,
        height: f64,
    },
    CustomRadial(RadialTable),
    CustomCylindrical(CylindricalTable),
}

/// Closed region outside which the density vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Sphere { radius: f64 },
    Cylinder { radius: f64, half_height: f64 },
}

impl Support {
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        match *self {
            Support::Sphere { radius } => x.norm() <= radius,
            Support::Cylinder { radius, half_height } => x.xy().norm() <= radius && x.z.abs() <= half_height,
        }
    }

    /// Radius of the smallest origin-centred sphere containing the support.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Support::Sphere { radius } => radius,
            Support::Cylinder { radius, half_height } => radius.hypot(half_height),
        }
    }

    /// Largest |z| reached by the support.
    pub fn z_extent(&self) -> f64 {
        match *self {
            Support::Sphere { radius } => radius,
            Support::Cylinder { half_height, .. } => half_height,
        }
    }

    /// Distance along the unit vector `dir` from an interior point `origin`
    /// to the support boundary.
    pub fn ray_exit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
        match *self {
            Support::Sphere { radius } => {
                let b = origin.dot(dir);
                let c = origin.norm_squared() - radius * radius;
                (-b + (b * b - c).max(0.0).sqrt()).max(0.0)
            }
            Support::Cylinder { radius, half_height } => {
                let mut exit = f64::INFINITY;
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 0.0 {
                    let b = origin.x * dir.x + origin.y * dir.y;
                    let c = origin.x * origin.x + origin.y * origin.y - radius * radius;
                    exit = (-b + (b * b - a * c).max(0.0).sqrt()) / a;
                }
                if dir.z > 0.0 {
                    exit = exit.min((half_height - origin.z) / dir.z);
                } else if dir.z < 0.0 {
                    exit = exit.min((-half_height - origin.z) / dir.z);
                }
                exit.max(0.0)
            }
        }
    }
}

/// A spin probability density `P(x) = N·s(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinDensityProfile {
    kind: ProfileKind,
    norm: f64,
}

impl SpinDensityProfile {
    /// Wraps a shape with normalization constant 1 (not yet normalized).
    pub fn from_kind(kind: ProfileKind) -> Result<Self> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidProfile(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        match &kind {
            ProfileKind::SphericalBessel { radius } => positive(*radius, "radius")?,
            ProfileKind::CylindricalBesselCosine { radius, height } => {
                positive(*radius, "radius")?;
                positive(*height, "height")?;
            }
            ProfileKind::CustomRadial(_) | ProfileKind::CustomCylindrical(_) => {}
        }
        Ok(Self { kind, norm: 1.0 })
    }

    /// Normalized `j₀(πr/R)²` profile.
    pub fn spherical_bessel(radius: f64) -> Result<Self> {
        normalize_profile(&Self::from_kind(ProfileKind::SphericalBessel { radius })?)
    }

    /// Normalized `[J₀(j₀₁ρ/R) cos(πz/H)]²` profile.
    pub fn cylindrical_bessel_cosine(radius: f64, height: f64) -> Result<Self> {
        normalize_profile(&Self::from_kind(ProfileKind::CylindricalBesselCosine {
            radius,
            height,
        })?)
    }

    pub fn custom_radial(table: RadialTable) -> Result<Self> {
        normalize_profile(&Self::from_kind(ProfileKind::CustomRadial(table))?)
    }

    pub fn custom_cylindrical(table: CylindricalTable) -> Result<Self> {
        normalize_profile(&Self::from_kind(ProfileKind::CustomCylindrical(table))?)
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    /// The normalization constant N (m⁻³ for the closed forms).
    pub fn norm_constant(&self) -> f64 {
        self.norm
    }

    pub fn is_spherical(&self) -> bool {
        matches!(
            self.kind,
            ProfileKind::SphericalBessel { .. } | ProfileKind::CustomRadial(_)
        )
    }

    pub fn support(&self) -> Support {
        match &self.kind {
            ProfileKind::SphericalBessel { radius } => Support::Sphere { radius: *radius },
            ProfileKind::CustomRadial(t) => Support::Sphere {
                radius: t.support_radius(),
            },
            ProfileKind::CylindricalBesselCosine { radius, height } => Support::Cylinder {
                radius: *radius,
                half_height: 0.5 * height,
            },
            ProfileKind::CustomCylindrical(t) => Support::Cylinder {
                radius: t.radius(),
                half_height: t.half_height(),
            },
        }
    }

    /// Same shape with a different normalization constant.
    pub fn with_norm_constant(&self, norm: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            norm,
        }
    }

    /// Density and its cylindrical derivatives `(P, ∂P/∂ρ, ∂P/∂z)`.
    pub fn axisymmetric(&self, rho: f64, z: f64) -> (f64, f64, f64) {
        let (s, sr, sz) = match &self.kind {
            ProfileKind::SphericalBessel { .. } | ProfileKind::CustomRadial(_) => {
                let r = rho.hypot(z);
                let (s, ds) = self.radial_shape(r);
                if r == 0.0 {
                    (s, 0.0, 0.0)
                } else {
                    (s, ds * rho / r, ds * z / r)
                }
            }
            ProfileKind::CylindricalBesselCosine { radius, height } => {
                if rho >= *radius || z.abs() >= 0.5 * height {
                    (0.0, 0.0, 0.0)
                } else {
                    let a = BESSEL_J0_FIRST_ZERO / radius;
                    let b = PI / height;
                    let j0 = bessel_j0(a * rho);
                    let j1 = bessel_j1(a * rho);
                    let c = (b * z).cos();
                    (
                        j0 * j0 * c * c,
                        -2.0 * a * j0 * j1 * c * c,
                        -b * j0 * j0 * (2.0 * b * z).sin(),
                    )
                }
            }
            ProfileKind::CustomCylindrical(t) => t.eval(rho, z),
        };
        (self.norm * s, self.norm * sr, self.norm * sz)
    }

    pub fn density(&self, x: &Vector3<f64>) -> f64 {
        self.axisymmetric(x.xy().norm(), x.z).0
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let rho = x.xy().norm();
        let (_, dr, dz) = self.axisymmetric(rho, x.z);
        if rho == 0.0 {
            return Vector3::new(0.0, 0.0, dz);
        }
        Vector3::new(dr * x.x / rho, dr * x.y / rho, dz)
    }

    /// Unnormalized radial shape and derivative for spherical kinds.
    fn radial_shape(&self, r: f64) -> (f64, f64) {
        match &self.kind {
            ProfileKind::SphericalBessel { radius } => {
                if r >= *radius {
                    return (0.0, 0.0);
                }
                let k = PI / radius;
                let j = spherical_j0(k * r);
                (j * j, 2.0 * k * j * spherical_j0_prime(k * r))
            }
            ProfileKind::CustomRadial(t) => t.eval(r),
            _ => unreachable!("radial_shape on a cylindrical profile"),
        }
    }

    /// Radial view of a spherical profile.
    pub fn radial(&self) -> Result<RadialProfile<'_>> {
        if self.is_spherical() {
            Ok(RadialProfile { profile: self })
        } else {
            Err(Error::WrongProfileKind(
                "operation requires a spherically symmetric profile".into(),
            ))
        }
    }

    /// `∫ P d³x` by quadrature.
    pub fn total_integral(&self, cfg: &QuadratureConfig) -> Result<Estimate> {
        match &self.kind {
            ProfileKind::SphericalBessel { .. } | ProfileKind::CustomRadial(_) => {
                let m = profile_moment(self, 2, cfg)?;
                Ok(Estimate {
                    value: 4.0 * PI * m.value,
                    error: 4.0 * PI * m.error,
                })
            }
            _ => {
                let est = cylinder_integral(self, |p, _, _| p, cfg)?;
                Ok(Estimate {
                    value: 4.0 * PI * est.value,
                    error: 4.0 * PI * est.error,
                })
            }
        }
    }

    /// Radial breakpoints used to split quadratures (knots of sampled tables).
    fn radial_breaks(&self) -> Vec<f64> {
        match &self.kind {
            ProfileKind::CustomRadial(t) => t.radii().to_vec(),
            _ => vec![0.0, self.support().bounding_radius()],
        }
    }
}

/// Radial accessors for a spherical profile.
#[derive(Debug, Clone, Copy)]
pub struct RadialProfile<'a> {
    profile: &'a SpinDensityProfile,
}

impl RadialProfile<'_> {
    pub fn radius(&self) -> f64 {
        self.profile.support().bounding_radius()
    }

    pub fn value(&self, r: f64) -> f64 {
        self.profile.norm * self.profile.radial_shape(r).0
    }

    pub fn derivative(&self, r: f64) -> f64 {
        self.profile.norm * self.profile.radial_shape(r).1
    }

    /// `∫₀^r P(t) t² dt`; equals `1/(4π)` for `r ≥ R` when normalized.
    pub fn enclosed(&self, r: f64) -> f64 {
        let n = self.profile.norm;
        match &self.profile.kind {
            ProfileKind::SphericalBessel { radius } => {
                let r = r.min(*radius);
                let x = 2.0 * PI * r / radius;
                n * radius.powi(3) / (4.0 * PI.powi(3)) * (x - x.sin())
            }
            ProfileKind::CustomRadial(t) => n * t.enclosed(r),
            _ => unreachable!(),
        }
    }

    /// `enclosed(r)/r³`, finite as `r → 0` where it tends to `P(0)/3`.
    pub fn enclosed_over_r3(&self, r: f64) -> f64 {
        let n = self.profile.norm;
        match &self.profile.kind {
            ProfileKind::SphericalBessel { radius } => {
                if r >= *radius {
                    return self.enclosed(r) / r.powi(3);
                }
                let k = 2.0 * PI / radius;
                let x = k * r;
                // (x - sin x)/x³ via its series for small x
                let g = if x < 1e-2 {
                    let x2 = x * x;
                    1.0 / 6.0 - x2 / 120.0 + x2 * x2 / 5040.0
                } else {
                    (x - x.sin()) / (x * x * x)
                };
                n * radius.powi(3) / (4.0 * PI.powi(3)) * g * k.powi(3)
            }
            ProfileKind::CustomRadial(t) => {
                if r > t.radii()[1] {
                    return n * t.enclosed(r) / r.powi(3);
                }
                let gl = GaussLegendre::new(4);
                n * gl.integrate(|u| t.eval(r * u).0 * u * u, 0.0, 1.0)
            }
            _ => unreachable!(),
        }
    }
}

/// Returns the profile rescaled so that `∫ P d³x = 1`.
pub fn normalize_profile(profile: &SpinDensityProfile) -> Result<SpinDensityProfile> {
    let cfg = QuadratureConfig {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_subdivisions: 2000,
    };
    let shape = profile.with_norm_constant(1.0);
    let total = match &shape.kind {
        ProfileKind::SphericalBessel { radius } => radius.powi(3) * 2.0 / PI,
        ProfileKind::CylindricalBesselCosine { radius, height } => {
            let j1 = bessel_j1(BESSEL_J0_FIRST_ZERO);
            0.5 * PI * radius * radius * height * j1 * j1
        }
        _ => shape.total_integral(&cfg)?.value,
    };
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidProfile(format!(
            "density integral must be positive and finite, got {total}"
        )));
    }
    Ok(shape.with_norm_constant(1.0 / total))
}

/// `∫₀^R P(r) r^k dr` for a spherical profile.
pub fn profile_moment(profile: &SpinDensityProfile, k: u32, cfg: &QuadratureConfig) -> Result<Estimate> {
    let radial = profile.radial()?;
    radial_integral(profile, |r| radial.value(r) * r.powi(k as i32), cfg)
}

/// `∫₀^R f(r) dr` split at the profile's radial knots.
pub fn radial_integral<F: Fn(f64) -> f64>(
    profile: &SpinDensityProfile,
    f: F,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    profile.radial()?;
    let breaks = profile.radial_breaks();
    let mut value = 0.0;
    let mut error = 0.0;
    for w in breaks.windows(2) {
        let est = integrate(&f, w[0], w[1], cfg)?;
        value += est.value;
        error += est.error;
    }
    Ok(Estimate { value, error })
}

/// `∫₀^{h}∫₀^{R} f(P, ρ, z) ρ dρ dz` over the upper half of a cylindrical support.
pub fn cylinder_integral<F: Fn(f64, f64, f64) -> f64>(
    profile: &SpinDensityProfile,
    f: F,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    let (rho_breaks, z_breaks) = match &profile.kind {
        ProfileKind::CustomCylindrical(t) => (t.rho.clone(), t.z.clone()),
        ProfileKind::CylindricalBesselCosine { radius, height } => (vec![0.0, *radius], vec![0.0, 0.5 * height]),
        _ => {
            return Err(Error::WrongProfileKind(
                "operation requires a cylindrical profile".into(),
            ))
        }
    };
    let inner_cfg = QuadratureConfig {
        rel_tol: cfg.rel_tol * 0.1,
        ..*cfg
    };
    let failure = std::cell::Cell::new(None);
    let inner_error = std::cell::Cell::new(0.0f64);
    let row = |z: f64| -> f64 {
        let mut total = 0.0;
        for w in rho_breaks.windows(2) {
            match integrate(
                |rho| f(profile.axisymmetric(rho, z).0, rho, z) * rho,
                w[0],
                w[1],
                &inner_cfg,
            ) {
                Ok(e) => {
                    total += e.value;
                    inner_error.set(inner_error.get().max(e.error));
                }
                Err(e) => failure.set(Some(e)),
            }
        }
        total
    };
    let mut value = 0.0;
    let mut error = 0.0;
    for w in z_breaks.windows(2) {
        let est = integrate(row, w[0], w[1], cfg)?;
        value += est.value;
        error += est.error + inner_error.get() * (w[1] - w[0]);
    }
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok(Estimate { value, error })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileSpecKind {
    #[serde(rename = "sphericalBessel")]
    SphericalBessel,
    #[serde(rename = "cylindricalBesselCosine")]
    CylindricalBesselCosine,
    #[serde(rename = "customRadial")]
    CustomRadial,
    #[serde(rename = "customCylindrical")]
    CustomCylindrical,
}

/// Serializable description of a density profile as it appears in
/// configuration files. Tables are given in metres; `values` holds one row
/// per `z_m` knot for cylindrical tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub kind: ProfileSpecKind,
    #[serde(rename = "R_m", default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(rename = "H_m", default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(rename = "r_m", default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(rename = "rho_m", default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(rename = "z_m", default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
}

impl ProfileSpec {
    pub fn spherical(radius: f64) -> Self {
        Self {
            kind: ProfileSpecKind::SphericalBessel,
            radius: Some(radius),
            ..Self::empty()
        }
    }

    pub fn cylindrical(radius: f64, height: f64) -> Self {
        Self {
            kind: ProfileSpecKind::CylindricalBesselCosine,
            radius: Some(radius),
            height: Some(height),
            ..Self::empty()
        }
    }

    fn empty() -> Self {
        Self {
            kind: ProfileSpecKind::SphericalBessel,
            radius: None,
            height: None,
            radii: None,
            p: None,
            rho: None,
            z: None,
            values: None,
        }
    }

    /// Builds the normalized profile.
    pub fn build(&self) -> Result<SpinDensityProfile> {
        fn need<T: Clone>(v: &Option<T>, key: &str, kind: &str) -> Result<T> {
            v.clone()
                .ok_or_else(|| Error::InvalidProfile(format!("profile kind {kind} requires `{key}`")))
        }
        match self.kind {
            ProfileSpecKind::SphericalBessel => {
                SpinDensityProfile::spherical_bessel(need(&self.radius, "R_m", "sphericalBessel")?)
            }
            ProfileSpecKind::CylindricalBesselCosine => SpinDensityProfile::cylindrical_bessel_cosine(
                need(&self.radius, "R_m", "cylindricalBesselCosine")?,
                need(&self.height, "H_m", "cylindricalBesselCosine")?,
            ),
            ProfileSpecKind::CustomRadial => SpinDensityProfile::custom_radial(RadialTable::new(
                need(&self.radii, "r_m", "customRadial")?,
                need(&self.p, "p", "customRadial")?,
            )?),
            ProfileSpecKind::CustomCylindrical => SpinDensityProfile::custom_cylindrical(CylindricalTable::new(
                need(&self.rho, "rho_m", "customCylindrical")?,
                need(&self.z, "z_m", "customCylindrical")?,
                need(&self.values, "values", "customCylindrical")?,
            )?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tight() -> QuadratureConfig {
        QuadratureConfig {
            abs_tol: 0.0,
            rel_tol: 1e-12,
            max_subdivisions: 2000,
        }
    }

    #[test]
    fn spherical_bessel_is_normalized() {
        let p = SpinDensityProfile::spherical_bessel(1e-9).unwrap();
        let m2 = profile_moment(&p, 2, &tight()).unwrap();
        assert!((m2.value - 1.0 / (4.0 * PI)).abs() < 1e-10 / (4.0 * PI), "{}", m2.value);
        assert!((p.norm_constant() - PI / (2.0 * 1e-27)).abs() / p.norm_constant() < 1e-14);
    }

    #[test]
    fn zeroth_moment_matches_riemann_sum() {
        let radius = 2.5e-10;
        let p = SpinDensityProfile::spherical_bessel(radius).unwrap();
        let m0 = profile_moment(&p, 0, &tight()).unwrap().value;
        let n = 1_000_000;
        let h = radius / n as f64;
        let riemann: f64 = (0..n)
            .map(|i| p.radial().unwrap().value((i as f64 + 0.5) * h) * h)
            .sum();
        assert!(m0 > 0.0);
        assert!((m0 - riemann).abs() / m0 < 1e-9, "{m0} vs {riemann}");
    }

    #[test]
    fn cylindrical_reference_is_normalized() {
        let p = SpinDensityProfile::cylindrical_bessel_cosine(2.5e-10, 2.0e-10).unwrap();
        let total = p.total_integral(&tight()).unwrap().value;
        assert!((total - 1.0).abs() < 1e-10, "{total}");
        match p.support() {
            Support::Cylinder { radius, half_height } => assert!((2.0 * half_height / radius - 0.8).abs() < 1e-12),
            _ => panic!("expected cylinder"),
        }
    }

    #[test]
    fn all_zero_table_is_rejected() {
        let err = RadialTable::new(vec![0.0, 1.0, 2.0], vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::InvalidProfile(_)));
    }

    #[test]
    fn table_without_trailing_zero_is_rejected() {
        assert!(RadialTable::new(vec![0.0, 1.0], vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn moment_on_cylinder_is_wrong_kind() {
        let p = SpinDensityProfile::cylindrical_bessel_cosine(1.0, 1.0).unwrap();
        assert!(matches!(
            profile_moment(&p, 2, &tight()),
            Err(Error::WrongProfileKind(_))
        ));
    }

    #[test]
    fn sampled_bessel_table_tracks_closed_form() {
        let radius = 1.0;
        let n = 400;
        let r: Vec<f64> = (0..=n).map(|i| radius * i as f64 / n as f64).collect();
        let s: Vec<f64> = r.iter().map(|&x| spherical_j0(PI * x / radius).powi(2)).collect();
        let mut s = s;
        s[n] = 0.0;
        let table = SpinDensityProfile::custom_radial(RadialTable::new(r, s).unwrap()).unwrap();
        let exact = SpinDensityProfile::spherical_bessel(radius).unwrap();
        let (tv, ev) = (table.radial().unwrap(), exact.radial().unwrap());
        for x in [0.0, 0.1, 0.37, 0.8, 0.99] {
            assert!((tv.value(x) - ev.value(x)).abs() < 1e-6 * ev.value(0.0), "x={x}");
            assert!((tv.enclosed(x) - ev.enclosed(x)).abs() < 1e-7, "x={x}");
            assert!((tv.enclosed_over_r3(x.max(1e-4)) - ev.enclosed_over_r3(x.max(1e-4))).abs() < 1e-5 * ev.value(0.0));
        }
        assert!((tv.enclosed(2.0) - 1.0 / (4.0 * PI)).abs() < 1e-13);
    }

    #[test]
    fn trailing_zeros_are_trimmed() {
        let t = RadialTable::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.support_radius(), 1.0);
    }

    #[test]
    fn enclosed_over_r3_limit() {
        let p = SpinDensityProfile::spherical_bessel(2.0).unwrap();
        let v = p.radial().unwrap();
        let p0 = v.value(0.0);
        assert!((v.enclosed_over_r3(1e-9) - p0 / 3.0).abs() < 1e-12 * p0);
        for r in [0.003, 0.01, 0.2, 1.5] {
            assert!(
                (v.enclosed_over_r3(r) - v.enclosed(r) / r.powi(3)).abs() < 1e-9 * p0,
                "r={r}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = SpinDensityProfile::cylindrical_bessel_cosine(1.0, 0.7).unwrap();
        let x = Vector3::new(0.2, -0.3, 0.1);
        let g = p.gradient(&x);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let fd = (p.density(&(x + e)) - p.density(&(x - e))) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * g.norm(), "k={k}");
        }
    }

    #[test]
    fn cylindrical_table_matches_closed_form() {
        let (radius, height) = (1.0, 0.8);
        let rho: Vec<f64> = (0..=120).map(|i| radius * i as f64 / 120.0).collect();
        let z: Vec<f64> = (0..=60).map(|i| 0.5 * height * i as f64 / 60.0).collect();
        let exact = SpinDensityProfile::cylindrical_bessel_cosine(radius, height).unwrap();
        let mut values: Vec<Vec<f64>> = z
            .iter()
            .map(|&zz| rho.iter().map(|&r| exact.axisymmetric(r, zz).0).collect())
            .collect();
        for row in values.iter_mut() {
            *row.last_mut().unwrap() = 0.0;
        }
        values.last_mut().unwrap().iter_mut().for_each(|v| *v = 0.0);
        let t = SpinDensityProfile::custom_cylindrical(CylindricalTable::new(rho, z, values).unwrap()).unwrap();
        let total = t.total_integral(&QuadratureConfig::default()).unwrap().value;
        assert!((total - 1.0).abs() < 1e-8);
        for (r, zz) in [(0.1, 0.05), (0.5, -0.2), (0.9, 0.35)] {
            let (a, _, _) = t.axisymmetric(r, zz);
            let (b, _, _) = exact.axisymmetric(r, zz);
            assert!((a - b).abs() < 1e-4 * exact.axisymmetric(0.0, 0.0).0, "({r},{zz})");
        }
    }

    #[test]
    fn ray_exit_lands_on_boundary() {
        let cyl = Support::Cylinder {
            radius: 1.0,
            half_height: 0.5,
        };
        let o = Vector3::new(0.2, 0.1, -0.1);
        for dir in [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.6, 0.8),
            Vector3::new(0.0, 0.0, -1.0),
        ] {
            let t = cyl.ray_exit(&o, &dir);
            let p = o + dir * t;
            let on_side = (p.xy().norm() - 1.0).abs() < 1e-12;
            let on_cap = (p.z.abs() - 0.5).abs() < 1e-12;
            assert!(on_side || on_cap);
        }
        let sph = Support::Sphere { radius: 2.0 };
        let t = sph.ray_exit(&o, &Vector3::new(0.0, 0.0, 1.0));
        assert!(((o + Vector3::new(0.0, 0.0, t)).norm() - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalization_is_scale_covariant(radius in 1e-11f64..1e-8, s in 0.1f64..10.0) {
            let a = SpinDensityProfile::spherical_bessel(radius).unwrap();
            let b = SpinDensityProfile::spherical_bessel(radius * s).unwrap();
            let ia = a.total_integral(&tight()).unwrap().value;
            let ib = b.total_integral(&tight()).unwrap().value;
            prop_assert!((ia - 1.0).abs() < 1e-10 && (ib - 1.0).abs() < 1e-10);
            prop_assert!((a.norm_constant() / b.norm_constant() - s.powi(3)).abs() < 1e-12 * s.powi(3));
        }

        #[test]
        fn density_is_non_negative(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let p = SpinDensityProfile::cylindrical_bessel_cosine(1.0, 1.5).unwrap();
            let q = SpinDensityProfile::spherical_bessel(1.3).unwrap();
            let v = Vector3::new(x, y, z);
            prop_assert!(p.density(&v) >= 0.0 && q.density(&v) >= 0.0);
            if !p.support().contains(&v) { prop_assert_eq!(p.density(&v), 0.0); }
        }
    }

    #[test]
    fn profile_spec_round_trip() {
        let spec: ProfileSpec =
            serde_json::from_str(r#"{"kind":"cylindricalBesselCosine","R_m":1.25e-10,"H_m":1e-10}"#).unwrap();
        let p = spec.build().unwrap();
        assert_eq!(
            p.support(),
            Support::Cylinder {
                radius: 1.25e-10,
                half_height: 0.5e-10
            }
        );
        assert!(serde_json::from_str::<ProfileSpec>(r#"{"kind":"sphericalBessel","R_m":1e-10,"radius":1}"#).is_err());
        let missing = ProfileSpec {
            radius: None,
            ..ProfileSpec::spherical(1e-10)
        };
        assert!(matches!(missing.build(), Err(Error::InvalidProfile(_))));
        let radial = ProfileSpec {
            kind: ProfileSpecKind::CustomRadial,
            radii: Some(vec![0.0, 1e-10, 2e-10]),
            p: Some(vec![1.0, 0.5, 0.0]),
            ..ProfileSpec::spherical(1.0)
        };
        assert!(radial.build().unwrap().is_spherical());
    }
}
