//! Detection thresholds for D_mag and dead-layer thickness accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::d_mag_spherical;
use crate::error::{Error, Result};
use crate::geometry::ProbeGeometry;
use crate::interp::MonotoneCubic;

/// Smallest detectable change in D (Hz) for a bulk NV⁻ centre and a 100 s
/// measurement, rounded from 1.85 kHz/√Hz / √(100 s).
pub const D_MIN_BULK_HZ: f64 = 200.0;

/// Distance below which a probe cannot approach a sample (m).
pub const DEFAULT_CONTACT_DISTANCE_M: f64 = 1e-9;

/// D_min (Hz) reached with shot-noise sensitivity `eta` (Hz/√Hz) after
/// averaging for `time_s`.
pub fn d_min_from_sensitivity(eta: f64, time_s: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite() && time_s > 0.0 && time_s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need positive sensitivity and time, got {eta} and {time_s}"
        )));
    }
    Ok(eta / time_s.sqrt())
}

/// A sample material for the detectability sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub mu_r: f64,
}

impl Material {
    pub fn new(name: &str, mu_r: f64) -> Self {
        Self {
            name: name.to_string(),
            mu_r,
        }
    }

    /// Superconductor, pyrolytic carbon, bismuth and water.
    pub fn standard_set() -> Vec<Material> {
        vec![
            Material::new("superconductor", 0.0),
            Material::new("pyrolytic carbon", 0.999590),
            Material::new("bismuth", 0.999834),
            Material::new("water", 0.999992),
        ]
    }
}

/// Distance-dependent degradation √(T₂^bulk/T₂^surface) of D_min near a
/// surface, interpolated monotonically between table entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTable {
    interp: MonotoneCubic,
}

impl SurfaceTable {
    /// Entries `(d_m, factor)` with strictly increasing distances and
    /// factors that are ≥ 1 and non-increasing.
    pub fn new(entries: &[(f64, f64)]) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidArgument(
                "surface table needs at least two entries".into(),
            ));
        }
        for w in entries.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidArgument(
                    "surface table distances must be strictly increasing".into(),
                ));
            }
            if w[1].1 > w[0].1 {
                return Err(Error::InvalidArgument(
                    "surface table factors must be non-increasing in distance".into(),
                ));
            }
        }
        for &(d, f) in entries {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "surface table distance must be positive, got {d}"
                )));
            }
            if !(f >= 1.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "surface table factor must be >= 1, got {f}"
                )));
            }
        }
        let (x, y) = entries.iter().copied().unzip();
        Ok(Self {
            interp: MonotoneCubic::new(x, y)?,
        })
    }

    /// Illustrative table; not measured data.
    pub fn example() -> Self {
        Self::new(&[
            (2e-9, 10.0),
            (5e-9, 4.0),
            (10e-9, 2.2),
            (20e-9, 1.5),
            (50e-9, 1.1),
            (100e-9, 1.0),
        ])
        .expect("valid example table")
    }

    pub fn entries(&self) -> Vec<(f64, f64)> {
        self.interp
            .xs()
            .iter()
            .copied()
            .zip(self.interp.ys().iter().copied())
            .collect()
    }

    /// Factor at `d`: clamped to the first entry below the table, 1 beyond it.
    pub fn factor(&self, d: f64) -> f64 {
        let xs = self.interp.xs();
        if d > xs[xs.len() - 1] {
            1.0
        } else if d <= xs[0] {
            self.interp.ys()[0]
        } else {
            self.interp.eval(d).max(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SensitivityModel {
    BulkConstant { d_min_bulk_hz: f64 },
    SurfaceTable { d_min_bulk_hz: f64, table: SurfaceTable },
}

impl Default for SensitivityModel {
    fn default() -> Self {
        SensitivityModel::BulkConstant {
            d_min_bulk_hz: D_MIN_BULK_HZ,
        }
    }
}

impl SensitivityModel {
    pub fn bulk(d_min_bulk_hz: f64) -> Result<Self> {
        check_d_min(d_min_bulk_hz)?;
        Ok(SensitivityModel::BulkConstant { d_min_bulk_hz })
    }

    pub fn surface(d_min_bulk_hz: f64, table: SurfaceTable) -> Result<Self> {
        check_d_min(d_min_bulk_hz)?;
        Ok(SensitivityModel::SurfaceTable { d_min_bulk_hz, table })
    }

    pub fn d_min_bulk_hz(&self) -> f64 {
        match self {
            SensitivityModel::BulkConstant { d_min_bulk_hz } | SensitivityModel::SurfaceTable { d_min_bulk_hz, .. } => {
                *d_min_bulk_hz
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SensitivityModel::BulkConstant { .. } => "bulkConstant",
            SensitivityModel::SurfaceTable { .. } => "surfaceTable",
        }
    }
}

fn check_d_min(d_min: f64) -> Result<()> {
    if !(d_min > 0.0 && d_min.is_finite()) {
        return Err(Error::InvalidArgument(format!("D_min must be positive, got {d_min}")));
    }
    Ok(())
}

/// D_min (Hz) at distance `d`; the bulk value for the bulk model.
pub fn surface_dmin(model: &SensitivityModel, d: f64) -> f64 {
    match model {
        SensitivityModel::BulkConstant { d_min_bulk_hz } => *d_min_bulk_hz,
        SensitivityModel::SurfaceTable { d_min_bulk_hz, table } => d_min_bulk_hz * table.factor(d),
    }
}

fn nv_geometry(mu_r1: f64, mu_r2: f64, d: f64) -> Result<ProbeGeometry> {
    ProbeGeometry::new(d, mu_r1, mu_r2, 1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityRow {
    pub material: String,
    pub mu_r2: f64,
    pub d: f64,
    pub d_mag_hz: f64,
    pub d_min_hz: f64,
    pub detectable: bool,
}

/// Largest detectable distance for one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub material: String,
    /// `None` when |D_mag| stays below D_min over the whole search interval.
    pub distance: Option<f64>,
    /// Set when the crossing lies closer than the contact distance.
    pub below_contact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityTable {
    pub rows: Vec<DetectabilityRow>,
    pub crossings: Vec<Crossing>,
}

pub const DETECTABILITY_CSV_HEADER: &str = "material,mu_r_II,d_m,D_mag_Hz,D_min_Hz,detectable";

impl DetectabilityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(DETECTABILITY_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{}\n",
                r.material, r.mu_r2, r.d, r.d_mag_hz, r.d_min_hz, r.detectable
            ));
        }
        out
    }
}

/// Default root-finding interval for crossings (m).
pub const CROSSING_SEARCH_INTERVAL: (f64, f64) = (1e-11, 1e-5);

/// |D_mag| against D_min for every material and distance (material-major),
/// plus one crossing distance per material.
pub fn detectability_curve(
    materials: &[Material],
    distances: &[f64],
    model: &SensitivityModel,
    mu_r1: f64,
) -> Result<DetectabilityTable> {
    if materials.is_empty() || distances.is_empty() {
        return Err(Error::InvalidArgument(
            "detectability sweep needs materials and distances".into(),
        ));
    }
    let cells: Vec<(usize, f64)> = (0..materials.len())
        .flat_map(|i| distances.iter().map(move |&d| (i, d)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(i, d)| {
            let m = &materials[i];
            let value = d_mag_spherical(&nv_geometry(mu_r1, m.mu_r, d)?)?.value_hz;
            let d_min = surface_dmin(model, d);
            Ok(DetectabilityRow {
                material: m.name.clone(),
                mu_r2: m.mu_r,
                d,
                d_mag_hz: value,
                d_min_hz: d_min,
                detectable: value.abs() >= d_min,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let crossings = materials
        .iter()
        .map(|m| {
            let distance = if nv_geometry(mu_r1, m.mu_r, 1.0)?.contrast() == 0.0 {
                None
            } else {
                crossing_distance(m.mu_r, mu_r1, model, CROSSING_SEARCH_INTERVAL)?
            };
            Ok(Crossing {
                material: m.name.clone(),
                distance,
                below_contact: distance.is_some_and(|d| d < DEFAULT_CONTACT_DISTANCE_M),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectabilityTable { rows, crossings })
}

/// d* = (|Δμ_r| μ₀ μ_r^I μ_B² / (16π h D_min))^(1/3) for the bulk model.
pub fn crossing_distance_closed_form(mu_r2: f64, mu_r1: f64, d_min_hz: f64) -> Result<f64> {
    check_d_min(d_min_hz)?;
    // |D_mag| d³ is independent of d
    let at_unit = d_mag_spherical(&nv_geometry(mu_r1, mu_r2, 1.0)?)?.value_hz.abs();
    if at_unit == 0.0 {
        return Err(Error::InvalidArgument(
            "no contrast: D_mag vanishes at every distance".into(),
        ));
    }
    Ok((at_unit / d_min_hz).cbrt())
}

/// Largest `d` in `interval` with |D_mag(d)| ≥ D_min(d), by a logarithmic
/// scan from the far end followed by bisection.
pub fn crossing_distance(
    mu_r2: f64,
    mu_r1: f64,
    model: &SensitivityModel,
    interval: (f64, f64),
) -> Result<Option<f64>> {
    let (lo, hi) = interval;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid search interval [{lo:e}, {hi:e}]"
        )));
    }
    let unit = nv_geometry(mu_r1, mu_r2, 1.0)?;
    if unit.contrast() == 0.0 {
        return Err(Error::InvalidArgument(
            "no contrast: D_mag vanishes at every distance".into(),
        ));
    }
    let margin = |d: f64| -> Result<f64> {
        let v = d_mag_spherical(&unit.with_distance(d))?.value_hz.abs();
        Ok(v.ln() - surface_dmin(model, d).ln())
    };
    const SCAN: usize = 512;
    let ratio = (hi / lo).ln();
    let at = |k: usize| lo * (ratio * k as f64 / SCAN as f64).exp();
    let mut upper = hi;
    if margin(hi)? >= 0.0 {
        return Ok(Some(hi));
    }
    for k in (0..SCAN).rev() {
        let d = at(k);
        if margin(d)? >= 0.0 {
            let (mut a, mut b) = (d, upper);
            while (b - a) > 1e-14 * b {
                let mid = 0.5 * (a + b);
                if margin(mid)? >= 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(Some(a));
        }
        upper = d;
    }
    Ok(None)
}

/// A dead layer of thickness `t` (μ_r ≈ that of region I) on top of a
/// magnetically active material; `d` is the distance to the active boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadLayerScenario {
    pub t: f64,
    pub d: f64,
    pub mu_r_active: f64,
    pub mu_r_dead: f64,
}

impl DeadLayerScenario {
    /// Highly permeable active material under a dead layer with μ_r = 1.
    pub fn permeable(t: f64, d: f64) -> Self {
        Self {
            t,
            d,
            mu_r_active: 1e12,
            mu_r_dead: 1.0,
        }
    }

    fn geometry(&self) -> Result<ProbeGeometry> {
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dead-layer thickness must be >= 0, got {}",
                self.t
            )));
        }
        nv_geometry(self.mu_r_dead, self.mu_r_active, self.d)
    }
}

/// Thickness accuracy Δt = D_min/|∂D_mag/∂d| = D_min·d/(3|D_mag|) (m).
pub fn dead_layer_accuracy(scenario: &DeadLayerScenario, d_min_hz: f64) -> Result<f64> {
    check_d_min(d_min_hz)?;
    let g = scenario.geometry()?;
    let dv = d_mag_spherical(&g)?.value_hz;
    if dv == 0.0 {
        return Err(Error::UndefinedAccuracy(
            "the active layer has no permeability contrast".into(),
        ));
    }
    Ok(d_min_hz * g.d / (3.0 * dv.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadLayerRow {
    pub d: f64,
    pub d_min_hz: f64,
    pub delta_t: f64,
}

pub const DEAD_LAYER_CSV_HEADER: &str = "d_m,D_min_Hz,delta_t_m";

/// Δt over a distance sweep for each D_min (D_min-major).
pub fn dead_layer_curve(
    distances: &[f64],
    d_mins: &[f64],
    mu_r_active: f64,
    mu_r_dead: f64,
) -> Result<Vec<DeadLayerRow>> {
    if distances.is_empty() || d_mins.is_empty() {
        return Err(Error::InvalidArgument(
            "dead-layer sweep needs distances and D_min values".into(),
        ));
    }
    d_mins
        .iter()
        .flat_map(|&dm| distances.iter().map(move |&d| (dm, d)))
        .map(|(dm, d)| {
            let s = DeadLayerScenario {
                t: 0.0,
                d,
                mu_r_active,
                mu_r_dead,
            };
            Ok(DeadLayerRow {
                d,
                d_min_hz: dm,
                delta_t: dead_layer_accuracy(&s, dm)?,
            })
        })
        .collect()
}

pub fn dead_layer_csv(rows: &[DeadLayerRow]) -> String {
    let mut out = String::from(DEAD_LAYER_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:e},{:e},{:e}\n", r.d, r.d_min_hz, r.delta_t));
    }
    out
}
