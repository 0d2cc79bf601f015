//! D_mag for axisymmetric densities from the solid-harmonic expansion of the
//! image potential, the cylinder-versus-sphere comparison map, and the
//! intrinsic (region-II independent) J_z² term.
//!
//! All moment integrals run in scaled units with the length unit `L` equal
//! to the support height (H for cylinders, 2R for spheres). Harmonic order
//! `l` indexes the series directly: l = 2, 4, 6, … (odd orders vanish by
//! the z-parity of the density).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::constants::CONSTANTS;
use crate::energy::{d_mag_spherical, DMethod, EffectiveD};
use crate::error::{Error, Result};
use crate::geometry::{permeability_contrast, ProbeGeometry};
use crate::profile::{ProfileKind, SpinDensityProfile, Support};
use crate::quad::{pairwise_sum, Estimate, GaussLegendre};
use crate::special::{legendre_derivative_table, legendre_table};

/// Truncation and quadrature controls for the harmonic series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesOptions {
    /// Largest even harmonic order evaluated.
    pub l_max: usize,
    /// Stop once a term falls below `tol` relative to the running sum.
    pub tol: f64,
    /// Required agreement between the ρ-form and z-form of each overlap.
    pub identity_tol: f64,
    /// Number of panel doublings allowed beyond the starting mesh.
    pub max_refinements: usize,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self {
            l_max: 64,
            tol: 1e-10,
            identity_tol: 1e-6,
            max_refinements: 6,
        }
    }
}

/// Which expansion point the overlap refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionPoint {
    /// The spin itself: overlaps of the density with its own Newton potential.
    Zero,
    /// The image point: overlaps with the region-II image potential.
    Interface,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTerm {
    pub l: usize,
    /// Image moment Q_l in units of L^-(l+1).
    pub q: f64,
    /// ρ-form overlap M_l in units of L^-3.
    pub m_rho: f64,
    /// z-form overlap; equals −m_rho up to quadrature error.
    pub m_z: f64,
    /// Dimensionless series coefficient f_l.
    pub f: f64,
    /// Quadrature error estimate for f_l.
    pub quadrature_error: f64,
}

/// Even-order image moments and overlaps for one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub l_max: usize,
    /// Length unit L (m) of the scaled moments.
    pub length_unit: f64,
    /// d/L.
    pub delta: f64,
    /// H/R of the support (2 for spheres).
    pub lambda: f64,
    pub terms: Vec<MomentTerm>,
}

impl MomentSet {
    pub fn term(&self, l: usize) -> Option<&MomentTerm> {
        self.terms.iter().find(|t| t.l == l)
    }

    /// Q_l in SI units (m^-(l+1)).
    pub fn q_si(&self, l: usize) -> Option<f64> {
        self.term(l).map(|t| t.q / self.length_unit.powi(l as i32 + 1))
    }

    /// M_l in SI units (m^-3).
    pub fn m_si(&self, l: usize) -> Option<f64> {
        self.term(l).map(|t| t.m_rho / self.length_unit.powi(3))
    }

    pub fn f_sum(&self) -> f64 {
        pairwise_sum(&self.terms.iter().map(|t| t.f).collect::<Vec<_>>())
    }

    /// |f_2| / Σ|f_l|, in (0, 1].
    pub fn l2_fraction(&self) -> f64 {
        let total: f64 = self.terms.iter().map(|t| t.f.abs()).sum();
        self.term(2).map_or(0.0, |t| t.f.abs() / total)
    }

    /// Σ_{l>2}|f_l| / Σ|f_l|.
    pub fn higher_order_fraction(&self) -> f64 {
        1.0 - self.l2_fraction()
    }
}

/// Support geometry in scaled units with quadrature breakpoints.
enum Meridian {
    /// Tensor product over ρ ∈ ρ-breaks and z ∈ z-breaks.
    Box { rho: Vec<f64>, z: Vec<f64> },
    /// Polar (r, θ) coordinates in the meridian half-plane.
    Polar { r: Vec<f64> },
}

struct Scaled {
    unit: f64,
    lambda: f64,
    meridian: Meridian,
    /// Sampled profiles use low-order panels aligned with the knots.
    tabulated: bool,
}

fn scaled(profile: &SpinDensityProfile) -> Scaled {
    match profile.kind() {
        ProfileKind::SphericalBessel { radius } => Scaled {
            unit: 2.0 * radius,
            lambda: 2.0,
            meridian: Meridian::Polar { r: vec![0.0, 0.5] },
            tabulated: false,
        },
        ProfileKind::CustomRadial(t) => {
            let unit = 2.0 * t.support_radius();
            Scaled {
                unit,
                lambda: 2.0,
                meridian: Meridian::Polar {
                    r: t.radii().iter().map(|v| v / unit).collect(),
                },
                tabulated: true,
            }
        }
        ProfileKind::CylindricalBesselCosine { radius, height } => Scaled {
            unit: *height,
            lambda: height / radius,
            meridian: Meridian::Box {
                rho: vec![0.0, radius / height],
                z: vec![-0.5, 0.5],
            },
            tabulated: false,
        },
        ProfileKind::CustomCylindrical(t) => {
            let unit = 2.0 * t.half_height();
            let mut z: Vec<f64> = t.z_knots().iter().rev().map(|v| -v / unit).collect();
            z.extend(t.z_knots().iter().skip(1).map(|v| v / unit));
            Scaled {
                unit,
                lambda: unit / t.radius(),
                meridian: Meridian::Box {
                    rho: t.rho_knots().iter().map(|v| v / unit).collect(),
                    z,
                },
                tabulated: true,
            }
        }
    }
}

const GL_ORDER: usize = 12;
const GL_ORDER_TABULATED: usize = 4;

fn panel_nodes(breaks: &[f64], panels_per_cell: usize, gl: &GaussLegendre) -> Vec<(f64, f64)> {
    breaks
        .windows(2)
        .flat_map(|w| gl.composite(w[0], w[1], panels_per_cell))
        .collect()
}

/// Nodes (ρ, z, weight·ρ) covering the meridian half-plane.
fn meridian_nodes(sc: &Scaled, level: usize) -> Vec<(f64, f64, f64)> {
    let (gl, panels) = if sc.tabulated {
        (GaussLegendre::new(GL_ORDER_TABULATED), 1usize << (level - 1))
    } else {
        (GaussLegendre::new(GL_ORDER), 1usize << level)
    };
    match &sc.meridian {
        Meridian::Box { rho, z } => {
            let rn = panel_nodes(rho, panels, &gl);
            let zn = panel_nodes(z, panels, &gl);
            let mut out = Vec::with_capacity(rn.len() * zn.len());
            for &(zz, wz) in &zn {
                for &(rr, wr) in &rn {
                    out.push((rr, zz, wr * wz * rr));
                }
            }
            out
        }
        Meridian::Polar { r } => {
            let rn = panel_nodes(r, panels, &gl);
            let tn = panel_nodes(&[0.0, PI], panels, &gl);
            let mut out = Vec::with_capacity(rn.len() * tn.len());
            for &(t, wt) in &tn {
                let (st, ct) = t.sin_cos();
                for &(rr, wr) in &rn {
                    out.push((rr * st, rr * ct, wr * wt * rr * rr * st));
                }
            }
            out
        }
    }
}

/// Raw scaled integrals for l = 0..=l_max at one mesh level.
struct Sums {
    q: Vec<f64>,
    t_rho: Vec<f64>,
    t_z: Vec<f64>,
    t_abs: Vec<f64>,
}

fn solid_harmonic_norm(l: usize) -> f64 {
    ((2 * l + 1) as f64 / (4.0 * PI)).sqrt()
}

fn moment_sums(profile: &SpinDensityProfile, sc: &Scaled, delta: f64, l_max: usize, level: usize) -> Sums {
    let nodes = meridian_nodes(sc, level);
    let unit = sc.unit;
    let width = 4 * (l_max + 1);
    const CHUNK: usize = 1024;
    let partials: Vec<Vec<f64>> = nodes
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; width];
            let mut pl = Vec::with_capacity(l_max + 1);
            let mut ploc = Vec::with_capacity(l_max + 1);
            let mut dploc = Vec::with_capacity(l_max + 1);
            for &(rho, z, w) in chunk {
                let (p, pr, pz) = profile.axisymmetric(rho * unit, z * unit);
                if p == 0.0 && pr == 0.0 && pz == 0.0 {
                    continue;
                }
                let (p, pr, pz) = (p * unit.powi(3), pr * unit.powi(4), pz * unit.powi(4));
                let u = 2.0 * delta - z;
                let rn = rho.hypot(u);
                legendre_table(l_max, u / rn, &mut pl);
                let inv = 1.0 / rn;
                let mut pow = inv;
                for l in 0..=l_max {
                    acc[l] += 2.0 * PI * w * p * solid_harmonic_norm(l) * pl[l] * pow;
                    pow *= inv;
                }
                let r = rho.hypot(z);
                let c = z / r;
                legendre_table(l_max, c, &mut ploc);
                legendre_derivative_table(&ploc, &mut dploc);
                let mut rpow = 1.0; // r^(l-2)
                for l in 2..=l_max {
                    let dh_rho = -rho * rpow * dploc[l - 1];
                    let dh_z = l as f64 * rpow * r * ploc[l - 1];
                    acc[width / 4 + l] += w * dh_rho * pr;
                    acc[width / 2 + l] += w * dh_z * pz;
                    acc[3 * width / 4 + l] += w * (dh_rho * pr).abs();
                    rpow *= r;
                }
            }
            acc
        })
        .collect();
    let col = |k: usize| -> f64 { pairwise_sum(&partials.iter().map(|v| v[k]).collect::<Vec<_>>()) };
    let n = l_max + 1;
    Sums {
        q: (0..n).map(col).collect(),
        t_rho: (0..n).map(|l| col(n + l)).collect(),
        t_z: (0..n).map(|l| col(2 * n + l)).collect(),
        t_abs: (0..n).map(|l| col(3 * n + l)).collect(),
    }
}

/// Checks that the spin lies in region I and that the expansion about the
/// image point converges over the support.
fn check_series_geometry(profile: &SpinDensityProfile, geom: &ProbeGeometry) -> Result<()> {
    geom.validate_with(profile)?;
    let support = profile.support();
    let limit = 2.0 * geom.d - support.z_extent();
    if support.bounding_radius() >= limit {
        return Err(Error::OutOfValidity(format!(
            "support radius {:e} m reaches the image support at {:e} m; the harmonic series diverges",
            support.bounding_radius(),
            limit
        )));
    }
    Ok(())
}

/// Image moment Q_l (m^-(l+1)) by tensor Gauss–Legendre quadrature over (ρ′, z′).
pub fn image_moment_q(profile: &SpinDensityProfile, geom: &ProbeGeometry, l: usize) -> Result<Estimate> {
    check_series_geometry(profile, geom)?;
    let sc = scaled(profile);
    let delta = geom.d / sc.unit;
    let a = moment_sums(profile, &sc, delta, l.max(2), 3).q[l];
    let b = moment_sums(profile, &sc, delta, l.max(2), 4).q[l];
    let scale = sc.unit.powi(l as i32 + 1);
    Ok(Estimate {
        value: b / scale,
        error: (b - a).abs() / scale,
    })
}

/// Overlap of the density with the expansion-point potential, both forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    /// ∬ ∂_ρΦ ∂_ρP ρ dρ dz (m^-3).
    pub rho_form: f64,
    /// ∬ ∂_zΦ ∂_zP ρ dρ dz (m^-3).
    pub z_form: f64,
    pub error: f64,
}

/// M_l about the image point (`Interface`), or the Newton-potential
/// overlaps (`Zero`, where `l` must be 0 and the two forms sum to 2∫P²).
pub fn overlap_m(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    l: usize,
    point: ExpansionPoint,
) -> Result<Overlap> {
    match point {
        ExpansionPoint::Interface => {
            if l % 2 == 1 || l == 0 {
                return Err(Error::InvalidArgument(format!(
                    "overlap requires an even order l >= 2 (odd orders vanish by parity), got {l}"
                )));
            }
            let set = moment_set(
                profile,
                geom,
                l,
                &SeriesOptions {
                    l_max: l,
                    tol: 0.0,
                    ..SeriesOptions::default()
                },
            )?;
            let t = set.term(l).expect("requested order present");
            let s = set.length_unit.powi(3);
            Ok(Overlap {
                rho_form: t.m_rho / s,
                z_form: t.m_z / s,
                error: t.quadrature_error,
            })
        }
        ExpansionPoint::Zero => {
            if l != 0 {
                return Err(Error::InvalidArgument(
                    "the self overlap is defined for l = 0 only".into(),
                ));
            }
            let it = intrinsic_overlaps(profile, 1)?;
            Ok(Overlap {
                rho_form: it.m_rho,
                z_form: it.m_z,
                error: it.error,
            })
        }
    }
}

/// Computes the even-order moment set up to `opts.l_max`, refining the mesh
/// until the dual-form identity holds for every order.
pub fn moment_set(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    l_max: usize,
    opts: &SeriesOptions,
) -> Result<MomentSet> {
    if l_max < 2 || l_max % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "l_max must be even and >= 2, got {l_max}"
        )));
    }
    check_series_geometry(profile, geom)?;
    let sc = scaled(profile);
    let delta = geom.d / sc.unit;
    let f_scale = |l: usize| 32.0 * PI * PI / (sc.lambda * sc.lambda * (2 * l + 1) as f64);
    let build = |s: &Sums| -> Vec<(f64, f64, f64)> {
        (2..=l_max)
            .step_by(2)
            .map(|l| {
                let k = s.q[l] * solid_harmonic_norm(l);
                (k * s.t_rho[l], -k * s.t_z[l], f_scale(l) * k * s.t_rho[l])
            })
            .collect()
    };
    let mut level = 1;
    let mut prev = build(&moment_sums(profile, &sc, delta, l_max, level));
    loop {
        level += 1;
        let sums = moment_sums(profile, &sc, delta, l_max, level);
        let cur = build(&sums);
        let f_total: f64 = cur.iter().map(|t| t.2.abs()).sum();
        let identity_ok = (2..=l_max).step_by(2).zip(&cur).all(|(l, t)| {
            let k = (sums.q[l] * solid_harmonic_norm(l)).abs();
            let floor = 1e-13 * k * sums.t_abs[l] + opts.identity_tol * f_total / f_scale(l);
            (t.0 - t.1).abs() <= opts.identity_tol * t.0.abs().max(t.1.abs()) + floor
        });
        let stable = cur
            .iter()
            .zip(&prev)
            .all(|(a, b)| (a.2 - b.2).abs() <= 1e-3 * opts.identity_tol * f_total);
        if identity_ok && stable {
            let terms = (2..=l_max)
                .step_by(2)
                .zip(cur.iter().zip(&prev))
                .map(|(l, (c, p))| MomentTerm {
                    l,
                    q: sums.q[l],
                    m_rho: c.0,
                    m_z: c.1,
                    f: c.2,
                    quadrature_error: (c.2 - p.2).abs(),
                })
                .collect();
            return Ok(MomentSet {
                l_max,
                length_unit: sc.unit,
                delta,
                lambda: sc.lambda,
                terms,
            });
        }
        if level > opts.max_refinements {
            return Err(Error::QuadratureFailure(format!(
                "overlap dual forms did not agree to {:e} after {} refinements",
                opts.identity_tol, opts.max_refinements
            )));
        }
        prev = cur;
    }
}

/// Result of the cylindrical series including the raw moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylindricalD {
    pub d: EffectiveD,
    pub moments: MomentSet,
}

/// D_mag for an axisymmetric density: (μ₀μ_r^I μ_B²/(16π H R² h))·Δμ_r·Σ f_l.
///
/// The series stops when a term drops below `opts.tol` of the running sum;
/// hitting `l_max` first leaves `converged = false`.
pub fn d_mag_cylindrical(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    opts: &SeriesOptions,
) -> Result<CylindricalD> {
    let dm = permeability_contrast(geom)?;
    let full = moment_set(profile, geom, opts.l_max.max(2) & !1, opts)?;
    let mut kept = Vec::new();
    let mut sum = 0.0;
    let mut converged = false;
    for t in &full.terms {
        kept.push(*t);
        sum += t.f;
        if t.l > 2 && t.f.abs() <= opts.tol * sum.abs() {
            converged = true;
            break;
        }
    }
    let moments = MomentSet { terms: kept, ..full };
    let n = moments.terms.len();
    let last = moments.terms[n - 1].f.abs();
    let support = profile.support();
    let analytic_ratio = (support.bounding_radius() / (2.0 * geom.d - support.z_extent())).powi(2);
    let observed_ratio = if n >= 2 {
        last / moments.terms[n - 2].f.abs().max(f64::MIN_POSITIVE)
    } else {
        0.0
    };
    let q = observed_ratio.max(analytic_ratio).min(0.99);
    let truncation = last * q / (1.0 - q);
    let quadrature: f64 = moments.terms.iter().map(|t| t.quadrature_error).sum();
    let unit = moments.length_unit;
    let (height, radius) = (unit, unit / moments.lambda);
    let mu = CONSTANTS.effective_magneton();
    let scale = CONSTANTS.mu0 * geom.mu_r1 * mu * mu / (16.0 * PI * height * radius * radius * CONSTANTS.h) * dm;
    let value = scale * moments.f_sum();
    let error = scale.abs() * (truncation + quadrature);
    Ok(CylindricalD {
        d: EffectiveD {
            value_hz: value,
            method: DMethod::CylindricalSeries,
            error_estimate_hz: error,
            geometry: *geom,
            converged: converged && error < value.abs(),
        },
        moments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylSphComparison {
    pub delta: f64,
    pub lambda: f64,
    pub d_cyl_hz: f64,
    pub d_sph_hz: f64,
    /// (D_cyl − D_sph)/(D_cyl + D_sph).
    pub rel_diff: f64,
    /// |f_2| / Σ|f_l|.
    pub l2_fraction: f64,
    pub higher_order_fraction: f64,
}

/// Height used for the physical columns of the comparison map (m).
pub const COMPARE_MAP_HEIGHT_M: f64 = 2.0e-10;

/// Compares the cylindrical series against the spherical closed form at one
/// (δ, λ), using the reference cylinder of height [`COMPARE_MAP_HEIGHT_M`]
/// in front of a superconductor.
pub fn compare_cell(delta: f64, lambda: f64, opts: &SeriesOptions) -> Result<CylSphComparison> {
    compare_cell_scaled(delta, lambda, COMPARE_MAP_HEIGHT_M, opts)
}

pub fn compare_cell_scaled(delta: f64, lambda: f64, height: f64, opts: &SeriesOptions) -> Result<CylSphComparison> {
    if !(lambda > 0.0 && delta > 0.5 && lambda.is_finite() && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need lambda > 0 and delta > 1/2, got ({lambda}, {delta})"
        )));
    }
    let profile = SpinDensityProfile::cylindrical_bessel_cosine(height / lambda, height)?;
    let geom = ProbeGeometry::new(delta * height, 1.0, 0.0, 1.0, 0.0)?;
    let cyl = d_mag_cylindrical(&profile, &geom, opts)?;
    let sph = d_mag_spherical(&geom)?.value_hz;
    let c = cyl.d.value_hz;
    Ok(CylSphComparison {
        delta,
        lambda,
        d_cyl_hz: c,
        d_sph_hz: sph,
        rel_diff: (c - sph) / (c + sph),
        l2_fraction: cyl.moments.l2_fraction(),
        higher_order_fraction: cyl.moments.higher_order_fraction(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareMap {
    /// Cells with λ varying slowest.
    pub cells: Vec<CylSphComparison>,
    pub resolution: [usize; 2],
    /// (δ, λ) points where rel_diff crosses zero, by linear interpolation
    /// along δ within each λ row and along λ within each δ column.
    pub identical_contour: Vec<(f64, f64)>,
}

pub const COMPARE_MAP_CSV_HEADER: &str = "delta,lambda,D_cyl_Hz,D_sph_Hz,rel_diff,l2_fraction";

impl CompareMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARE_MAP_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                c.delta, c.lambda, c.d_cyl_hz, c.d_sph_hz, c.rel_diff, c.l2_fraction
            ));
        }
        out
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Comparison grid with linear spacing in λ and δ; `resolution = [n_λ, n_δ]`.
pub fn compare_map(
    lambda_range: (f64, f64),
    delta_range: (f64, f64),
    resolution: [usize; 2],
    opts: &SeriesOptions,
) -> Result<CompareMap> {
    let (l0, l1) = lambda_range;
    let (d0, d1) = delta_range;
    if resolution.contains(&0) {
        return Err(Error::InvalidArgument("map resolution must be at least 1".into()));
    }
    if !(l0 > 0.0 && l1 >= l0 && d0 > 0.5 && d1 >= d0 && l1.is_finite() && d1.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid ranges: lambda [{l0}, {l1}], delta [{d0}, {d1}]"
        )));
    }
    let lambdas = linspace(l0, l1, resolution[0]);
    let deltas = linspace(d0, d1, resolution[1]);
    let pairs: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&l| deltas.iter().map(move |&d| (l, d)))
        .collect();
    let cells: Result<Vec<CylSphComparison>> = pairs.par_iter().map(|&(l, d)| compare_cell(d, l, opts)).collect();
    let cells = cells?;
    let nd = deltas.len();
    let mut contour = Vec::new();
    let crossing = |a: &CylSphComparison, b: &CylSphComparison| -> Option<(f64, f64)> {
        if a.rel_diff == 0.0 {
            return Some((a.delta, a.lambda));
        }
        if a.rel_diff * b.rel_diff < 0.0 {
            let t = a.rel_diff / (a.rel_diff - b.rel_diff);
            return Some((a.delta + t * (b.delta - a.delta), a.lambda + t * (b.lambda - a.lambda)));
        }
        None
    };
    for i in 0..lambdas.len() {
        for j in 0..nd.saturating_sub(1) {
            contour.extend(crossing(&cells[i * nd + j], &cells[i * nd + j + 1]));
        }
    }
    for j in 0..nd {
        for i in 0..lambdas.len().saturating_sub(1) {
            contour.extend(crossing(&cells[i * nd + j], &cells[(i + 1) * nd + j]));
        }
    }
    Ok(CompareMap {
        cells,
        resolution,
        identical_contour: contour,
    })
}

/// Upper-bound estimate of the l = 3 correction from three-fold symmetry,
/// relative to the l = 2 term: 1/δ (20% at δ = 5). A bound, not a computed
/// correction.
pub fn c3v_correction_bound(delta: f64) -> Result<f64> {
    if !(delta > 1.0) || !delta.is_finite() {
        return Err(Error::OutOfValidity(format!(
            "the l = 3 bound needs delta > 1, got {delta}"
        )));
    }
    Ok(1.0 / delta)
}

/// The region-II independent J_z² coefficient of an axisymmetric density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicTerm {
    /// ∬ ∂_ρψ ∂_ρP ρ dρ dz with ψ the Newton potential of P (m^-3).
    pub m_rho: f64,
    /// ∬ ∂_zψ ∂_zP ρ dρ dz (m^-3).
    pub m_z: f64,
    /// |m_rho + m_z − 2∫P²d³x| relative to 2∫P²d³x.
    pub sum_rule_residual: f64,
    /// μ₀μ_r^I μ_B² (m_rho − 2 m_z)/(2h) (Hz); zero for spherical densities.
    pub value_hz: f64,
    pub error_hz: f64,
    pub error: f64,
}

struct IntrinsicRaw {
    m_rho: f64,
    m_z: f64,
    p2: f64,
}

/// Angular pieces (α ranges) over which the ray exit distance is smooth.
fn alpha_pieces(support: &Support, rho0: f64, z0: f64, beta: f64) -> Vec<(f64, f64)> {
    match *support {
        Support::Sphere { .. } => vec![(0.0, PI)],
        Support::Cylinder { radius, half_height } => {
            let sb = beta.sin();
            let sh = -rho0 * beta.cos() + (radius * radius - rho0 * rho0 * sb * sb).max(0.0).sqrt();
            let up = sh.atan2(half_height - z0);
            let down = PI - sh.atan2(half_height + z0);
            vec![(0.0, up), (up, down), (down, PI)]
        }
    }
}

fn intrinsic_at_level(profile: &SpinDensityProfile, level: usize) -> IntrinsicRaw {
    let support = profile.support();
    let gl_o = GaussLegendre::new(8 * (level + 1));
    let gl_a = GaussLegendre::new(8 * (level + 1));
    let gl_s = GaussLegendre::new(8 * (level + 1));
    let n_beta = 16 * (level + 1);
    let outer: Vec<(f64, f64, f64)> = match support {
        Support::Cylinder { radius, half_height } => {
            let mut v = Vec::new();
            for (i, &zn) in gl_o.nodes.iter().enumerate() {
                for (k, &rn) in gl_o.nodes.iter().enumerate() {
                    let z = 0.5 * half_height * (zn + 1.0);
                    let r = 0.5 * radius * (rn + 1.0);
                    let w = 0.25 * half_height * radius * gl_o.weights[i] * gl_o.weights[k] * r;
                    v.push((r, z, 2.0 * w));
                }
            }
            v
        }
        Support::Sphere { radius } => {
            let mut v = Vec::new();
            for (i, &tn) in gl_o.nodes.iter().enumerate() {
                for (k, &rn) in gl_o.nodes.iter().enumerate() {
                    let t = 0.25 * PI * (tn + 1.0);
                    let r = 0.5 * radius * (rn + 1.0);
                    let w = 0.25 * PI * 0.5 * radius * gl_o.weights[i] * gl_o.weights[k] * r * r * t.sin();
                    v.push((r * t.sin(), r * t.cos(), 2.0 * w));
                }
            }
            v
        }
    };
    let rows: Vec<[f64; 3]> = outer
        .par_iter()
        .map(|&(rho0, z0, w)| {
            let (p0, pr0, pz0) = profile.axisymmetric(rho0, z0);
            let origin = nalgebra::Vector3::new(rho0, 0.0, z0);
            let mut grad_x = 0.0;
            let mut grad_z = 0.0;
            for ib in 0..n_beta {
                let beta = 2.0 * PI * (ib as f64 + 0.5) / n_beta as f64;
                let (sb, cb) = beta.sin_cos();
                for (a0, a1) in alpha_pieces(&support, rho0, z0, beta) {
                    if a1 <= a0 {
                        continue;
                    }
                    for (ia, &an) in gl_a.nodes.iter().enumerate() {
                        let alpha = 0.5 * (a0 + a1) + 0.5 * (a1 - a0) * an;
                        let wa = 0.5 * (a1 - a0) * gl_a.weights[ia] * alpha.sin();
                        let (sa, ca) = alpha.sin_cos();
                        let dir = nalgebra::Vector3::new(sa * cb, sa * sb, ca);
                        let exit = support.ray_exit(&origin, &dir);
                        let (mut gx, mut gz) = (0.0, 0.0);
                        for (is, &sn) in gl_s.nodes.iter().enumerate() {
                            let s = 0.5 * exit * (sn + 1.0);
                            let ws = 0.5 * exit * gl_s.weights[is] * s;
                            let p = origin + dir * s;
                            let rho = p.xy().norm();
                            let (_, pr, pz) = profile.axisymmetric(rho, p.z);
                            if rho > 0.0 {
                                gx += ws * pr * p.x / rho;
                            }
                            gz += ws * pz;
                        }
                        grad_x += wa * gx;
                        grad_z += wa * gz;
                    }
                }
            }
            let wb = 2.0 * PI / n_beta as f64;
            [w * wb * grad_x * pr0, w * wb * grad_z * pz0, w * p0 * p0]
        })
        .collect();
    let col = |k: usize| pairwise_sum(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
    IntrinsicRaw {
        m_rho: col(0),
        m_z: col(1),
        p2: 2.0 * PI * col(2),
    }
}

fn intrinsic_overlaps(profile: &SpinDensityProfile, level: usize) -> Result<IntrinsicTerm> {
    let coarse = intrinsic_at_level(profile, level);
    let fine = intrinsic_at_level(profile, level + 1);
    let sum_rule = 2.0 * fine.p2;
    let residual = ((fine.m_rho + fine.m_z) - sum_rule).abs() / sum_rule;
    let aniso = fine.m_rho - 2.0 * fine.m_z;
    let err = (aniso - (coarse.m_rho - 2.0 * coarse.m_z)).abs() + residual * sum_rule;
    Ok(IntrinsicTerm {
        m_rho: fine.m_rho,
        m_z: fine.m_z,
        sum_rule_residual: residual,
        value_hz: 0.0,
        error_hz: 0.0,
        error: err,
    })
}

/// The intrinsic J_z² coefficient μ₀μ_r^I μ_B² (M_ρ − 2M_z)/2 of the density
/// itself. It is indistinguishable from the crystal-field D and is kept out
/// of D_mag.
pub fn intrinsic_jz2_term(profile: &SpinDensityProfile, geom: &ProbeGeometry) -> Result<IntrinsicTerm> {
    geom.validate()?;
    let mut t = intrinsic_overlaps(profile, 1)?;
    let mu = CONSTANTS.effective_magneton();
    let scale = CONSTANTS.mu0 * geom.mu_r1 * mu * mu / (2.0 * CONSTANTS.h);
    t.value_hz = scale * (t.m_rho - 2.0 * t.m_z);
    t.error_hz = scale * t.error;
    Ok(t)
}
