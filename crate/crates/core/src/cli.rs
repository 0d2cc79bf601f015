//! Command-line front end: JSON config plus flag overrides, one subcommand
//! per figure-style output, atomic writes and a run manifest.

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::constants::D_GS_HZ;
use crate::cylindrical::{compare_map, d_mag_cylindrical, SeriesOptions};
use crate::energy::{d_mag_spherical, d_mag_sweep_csv, EffectiveD};
use crate::error::Error;
use crate::geometry::ProbeGeometry;
use crate::magnetostatics::{render_field_grid, GridExtent};
use crate::oracle::{evaluate_case, outcomes_csv, RegressionManifest};
use crate::profile::{ProfileSpec, ProfileSpecKind, SpinDensityProfile};
use crate::protocol::{estimate_d, ramsey_fringe, tau_grid, FringeOptions, ShotNoise};
use crate::sensing::{
    dead_layer_csv, dead_layer_curve, detectability_curve, Material, SensitivityModel, SurfaceTable, D_MIN_BULK_HZ,
};

pub const THREADS_ENV: &str = "MAGENERGY_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    /// Magnetic induction B on a grid around the spin.
    FieldMap,
    /// D_mag against distance for a list of permeabilities.
    DmagCurve,
    /// Cylindrical against spherical D_mag over (λ, δ).
    CylCompare,
    /// Dead-layer thickness accuracy against distance.
    DeadLayer,
    /// Material detectability against distance, with crossing distances.
    Detectability,
    /// Noisy Ramsey fringes and the fitted D.
    ProtocolSim,
    /// Re-runs an oracle regression manifest.
    OracleVerify,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::FieldMap => "field-map",
            CommandKind::DmagCurve => "dmag-curve",
            CommandKind::CylCompare => "cyl-compare",
            CommandKind::DeadLayer => "dead-layer",
            CommandKind::Detectability => "detectability",
            CommandKind::ProtocolSim => "protocol-sim",
            CommandKind::OracleVerify => "oracle-verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Log,
    Linear,
}

/// Run configuration. Every key is optional; flags with the same name
/// (underscores written as hyphens) override file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_m: Option<f64>,
    #[serde(rename = "mu_r_I", default, skip_serializing_if = "Option::is_none")]
    pub mu_r_i: Option<f64>,
    #[serde(rename = "mu_r_II", default, skip_serializing_if = "Option::is_none")]
    pub mu_r_ii: Option<f64>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dmin_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dmin_list_hz: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface_t2_table: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_range_m: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_spacing: Option<Spacing>,
    #[serde(rename = "mu_r_II_list", default, skip_serializing_if = "Option::is_none")]
    pub mu_r_ii_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<Vec<Material>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_r_active: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent_m: Option<[[f64; 2]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_region_two: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_range_s: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_offset_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Flags; each mirrors the config key of the same name.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long = "d-m", global = true)]
    pub d_m: Option<f64>,
    #[arg(long = "mu-r-I", global = true)]
    pub mu_r_i: Option<f64>,
    #[arg(long = "mu-r-II", global = true)]
    pub mu_r_ii: Option<f64>,
    #[arg(long = "J", global = true)]
    pub spin: Option<f64>,
    #[arg(long = "eta-rad", global = true, allow_hyphen_values = true)]
    pub eta_rad: Option<f64>,
    /// sphericalBessel, cylindricalBesselCosine, customRadial or customCylindrical.
    #[arg(long = "profile-kind", global = true)]
    pub profile_kind: Option<String>,
    #[arg(long = "R-m", global = true)]
    pub radius: Option<f64>,
    #[arg(long = "H-m", global = true)]
    pub height: Option<f64>,
    #[arg(long = "dmin-hz", global = true)]
    pub dmin_hz: Option<f64>,
    #[arg(long = "dmin-list-hz", global = true, value_delimiter = ',')]
    pub dmin_list_hz: Option<Vec<f64>>,
    /// Flat list d₁,f₁,d₂,f₂,…
    #[arg(long = "surface-t2-table", global = true, value_delimiter = ',')]
    pub surface_t2_table: Option<Vec<f64>>,
    #[arg(long = "d-range-m", global = true, num_args = 2)]
    pub d_range_m: Option<Vec<f64>>,
    #[arg(long = "d-points", global = true)]
    pub d_points: Option<usize>,
    #[arg(long = "d-spacing", global = true)]
    pub d_spacing: Option<Spacing>,
    #[arg(long = "mu-r-II-list", global = true, value_delimiter = ',')]
    pub mu_r_ii_list: Option<Vec<f64>>,
    /// Comma-separated name=mu_r pairs.
    #[arg(long, global = true, value_delimiter = ',')]
    pub materials: Option<Vec<String>>,
    #[arg(long = "mu-r-active", global = true)]
    pub mu_r_active: Option<f64>,
    #[arg(long = "lambda-range", global = true, num_args = 2)]
    pub lambda_range: Option<Vec<f64>>,
    #[arg(long = "delta-range", global = true, num_args = 2)]
    pub delta_range: Option<Vec<f64>>,
    #[arg(long, global = true, num_args = 2)]
    pub grid: Option<Vec<usize>>,
    /// xmin xmax ymin ymax zmin zmax
    #[arg(long = "extent-m", global = true, num_args = 6, allow_hyphen_values = true)]
    pub extent_m: Option<Vec<f64>>,
    #[arg(long, global = true, num_args = 3)]
    pub resolution: Option<Vec<usize>>,
    #[arg(long = "fill-region-two", global = true)]
    pub fill_region_two: Option<bool>,
    #[arg(long = "tau-range-s", global = true, num_args = 2)]
    pub tau_range_s: Option<Vec<f64>>,
    #[arg(long = "tau-points", global = true)]
    pub tau_points: Option<usize>,
    #[arg(long, global = true)]
    pub shots: Option<u64>,
    #[arg(long = "reference-offset-hz", global = true, allow_hyphen_values = true)]
    pub reference_offset_hz: Option<f64>,
    #[arg(long = "t2-s", global = true)]
    pub t2_s: Option<f64>,
    #[arg(long = "oracle-manifest", global = true)]
    pub oracle_manifest: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Parser)]
#[command(
    name = "magenergy",
    version,
    about = "Magnetic back-action of a permeable half-space on a localized spin"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandKind,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Physics(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Physics(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Physics(m) => write!(f, "computation failed: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidGeometry(_)
            | Error::InvalidProfile(_)
            | Error::WrongProfileKind(_)
            | Error::InvalidArgument(_)
            | Error::Region(_) => CliError::Config(e.to_string()),
            Error::QuadratureFailure(_)
            | Error::FitFailure(_)
            | Error::OutOfValidity(_)
            | Error::UndefinedAccuracy(_) => CliError::Physics(e.to_string()),
        }
    }
}

/// Parses a JSON config, reporting the failing field path and position.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        CliError::Config(format!("{origin}: field `{path}`: {inner}"))
    })
}

fn pair<T: Copy>(v: &Option<Vec<T>>) -> Option<[T; 2]> {
    v.as_ref().map(|v| [v[0], v[1]])
}

fn apply_overrides(mut cfg: RunConfig, o: &Overrides) -> Result<RunConfig, CliError> {
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = o.$field.clone() {
                cfg.$field = Some(v);
            }
        };
    }
    set!(d_m);
    set!(mu_r_i);
    set!(mu_r_ii);
    set!(spin);
    set!(eta_rad);
    set!(dmin_hz);
    set!(dmin_list_hz);
    set!(d_points);
    set!(d_spacing);
    set!(mu_r_ii_list);
    set!(mu_r_active);
    set!(fill_region_two);
    set!(tau_points);
    set!(shots);
    set!(reference_offset_hz);
    set!(t2_s);
    set!(oracle_manifest);
    set!(output);
    set!(format);
    set!(seed);
    if let Some(v) = pair(&o.d_range_m) {
        cfg.d_range_m = Some(v);
    }
    if let Some(v) = pair(&o.lambda_range) {
        cfg.lambda_range = Some(v);
    }
    if let Some(v) = pair(&o.delta_range) {
        cfg.delta_range = Some(v);
    }
    if let Some(v) = pair(&o.grid) {
        cfg.grid = Some(v);
    }
    if let Some(v) = pair(&o.tau_range_s) {
        cfg.tau_range_s = Some(v);
    }
    if let Some(v) = &o.resolution {
        cfg.resolution = Some([v[0], v[1], v[2]]);
    }
    if let Some(v) = &o.extent_m {
        cfg.extent_m = Some([[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]]);
    }
    if let Some(flat) = &o.surface_t2_table {
        if flat.len() % 2 != 0 {
            return Err(CliError::Config(
                "--surface-t2-table needs distance,factor pairs".into(),
            ));
        }
        cfg.surface_t2_table = Some(flat.chunks(2).map(|c| [c[0], c[1]]).collect());
    }
    if let Some(list) = &o.materials {
        let parsed = list
            .iter()
            .map(|item| {
                let (name, mu) = item
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("material `{item}` is not name=mu_r")))?;
                let mu: f64 = mu
                    .parse()
                    .map_err(|_| CliError::Config(format!("material `{item}`: bad mu_r")))?;
                Ok(Material::new(name, mu))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        cfg.materials = Some(parsed);
    }
    if o.profile_kind.is_some() || o.radius.is_some() || o.height.is_some() {
        let mut spec = cfg
            .profile
            .clone()
            .unwrap_or_else(|| ProfileSpec::spherical(DEFAULT_RADIUS_M));
        if let Some(kind) = &o.profile_kind {
            spec.kind = serde_json::from_value::<ProfileSpecKind>(Value::String(kind.clone()))
                .map_err(|_| CliError::Config(format!("unknown profile kind `{kind}`")))?;
        }
        if let Some(r) = o.radius {
            spec.radius = Some(r);
        }
        if let Some(h) = o.height {
            spec.height = Some(h);
        }
        cfg.profile = Some(spec);
    }
    Ok(cfg)
}

const DEFAULT_RADIUS_M: f64 = 2.5e-10;

/// Fills every default for `command` so the manifest echoes exactly what ran.
pub fn resolve(command: CommandKind, mut c: RunConfig) -> Result<RunConfig, CliError> {
    if let Some(declared) = c.command {
        if declared != command {
            return Err(CliError::Config(format!(
                "config is for `{}` but `{}` was requested",
                declared.name(),
                command.name()
            )));
        }
    }
    c.command = Some(command);
    c.d_m.get_or_insert(1e-9);
    c.mu_r_i.get_or_insert(1.0);
    c.mu_r_ii.get_or_insert(0.0);
    c.spin.get_or_insert(1.0);
    c.eta_rad.get_or_insert(0.0);
    c.profile
        .get_or_insert_with(|| ProfileSpec::spherical(DEFAULT_RADIUS_M));
    c.format.get_or_insert(Format::Csv);
    match command {
        CommandKind::FieldMap => {
            let d = c.d_m.unwrap_or(1e-9);
            c.extent_m
                .get_or_insert([[-2.0 * d, 2.0 * d], [0.0, 0.0], [-2.0 * d, 2.0 * d]]);
            c.resolution.get_or_insert([64, 1, 64]);
            c.fill_region_two.get_or_insert(true);
        }
        CommandKind::DmagCurve => {
            c.d_range_m.get_or_insert([1e-9, 1e-7]);
            c.d_points.get_or_insert(50);
            c.d_spacing.get_or_insert(Spacing::Log);
            c.mu_r_ii_list
                .get_or_insert_with(|| Material::standard_set().iter().map(|m| m.mu_r).collect());
        }
        CommandKind::CylCompare => {
            c.lambda_range.get_or_insert([0.3, 3.0]);
            c.delta_range.get_or_insert([2.0, 20.0]);
            c.grid.get_or_insert([8, 8]);
        }
        CommandKind::DeadLayer => {
            c.d_range_m.get_or_insert([1e-9, 4e-9]);
            c.d_points.get_or_insert(31);
            c.d_spacing.get_or_insert(Spacing::Linear);
            let dmin = *c.dmin_hz.get_or_insert(D_MIN_BULK_HZ);
            c.dmin_list_hz.get_or_insert(vec![dmin]);
            c.mu_r_active.get_or_insert(1e12);
        }
        CommandKind::Detectability => {
            c.d_range_m.get_or_insert([1e-9, 1e-7]);
            c.d_points.get_or_insert(50);
            c.d_spacing.get_or_insert(Spacing::Log);
            c.dmin_hz.get_or_insert(D_MIN_BULK_HZ);
            c.materials.get_or_insert_with(Material::standard_set);
        }
        CommandKind::ProtocolSim => {
            c.tau_range_s.get_or_insert([0.0, 1e-5]);
            c.tau_points.get_or_insert(200);
            c.reference_offset_hz.get_or_insert(-1e6);
            c.seed.get_or_insert(0);
        }
        CommandKind::OracleVerify => {}
    }
    if c.output.is_none() {
        return Err(CliError::Config("no output path: pass --output or set `output`".into()));
    }
    Ok(c)
}

fn geometry(c: &RunConfig) -> Result<ProbeGeometry, CliError> {
    Ok(ProbeGeometry::new(
        c.d_m.unwrap_or_default(),
        c.mu_r_i.unwrap_or_default(),
        c.mu_r_ii.unwrap_or_default(),
        c.spin.unwrap_or_default(),
        c.eta_rad.unwrap_or_default(),
    )?)
}

fn profile(c: &RunConfig) -> Result<SpinDensityProfile, CliError> {
    Ok(c.profile.as_ref().expect("resolved profile").build()?)
}

fn distances(c: &RunConfig) -> Result<Vec<f64>, CliError> {
    let [lo, hi] = c.d_range_m.expect("resolved range");
    let n = c.d_points.expect("resolved count");
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 || (n == 1 && hi != lo) {
        return Err(CliError::Config(format!(
            "invalid distance sweep [{lo:e}, {hi:e}] x {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let t = |k: usize| k as f64 / (n - 1) as f64;
    Ok(match c.d_spacing.unwrap_or(Spacing::Log) {
        Spacing::Log => (0..n).map(|k| lo * (hi / lo).powf(t(k))).collect(),
        Spacing::Linear => (0..n).map(|k| lo + (hi - lo) * t(k)).collect(),
    })
}

fn sensitivity(c: &RunConfig) -> Result<SensitivityModel, CliError> {
    let dmin = c.dmin_hz.unwrap_or(D_MIN_BULK_HZ);
    Ok(match &c.surface_t2_table {
        Some(rows) => {
            let entries: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            SensitivityModel::surface(dmin, SurfaceTable::new(&entries)?)?
        }
        None => SensitivityModel::bulk(dmin)?,
    })
}

/// D_mag by the method matching the profile symmetry.
fn d_mag_for(profile: &SpinDensityProfile, geom: &ProbeGeometry) -> Result<EffectiveD, CliError> {
    let d = if profile.is_spherical() {
        d_mag_spherical(geom)?
    } else {
        d_mag_cylindrical(profile, geom, &SeriesOptions::default())?.d
    };
    if !d.converged {
        return Err(CliError::Physics(format!(
            "D_mag at d = {:e} m did not converge",
            geom.d
        )));
    }
    Ok(d)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

/// What a command produced: the main output text plus a summary for the manifest.
pub struct CommandOutput {
    pub text: String,
    pub summary: Value,
    pub failed: Option<String>,
}

/// Executes one resolved configuration without touching the filesystem
/// (except to read an oracle manifest).
pub fn execute(c: &RunConfig) -> Result<CommandOutput, CliError> {
    let format = c.format.unwrap_or(Format::Csv);
    let pick = |csv: String, json: String| if format == Format::Csv { csv } else { json };
    let command = c.command.expect("resolved command");
    match command {
        CommandKind::FieldMap => {
            let p = profile(c)?;
            let g = geometry(c)?;
            let e = c.extent_m.expect("resolved extent");
            let extent = GridExtent {
                min: [e[0][0], e[1][0], e[2][0]],
                max: [e[0][1], e[1][1], e[2][1]],
            };
            let grid = render_field_grid(
                &p,
                &g,
                extent,
                c.resolution.expect("resolved"),
                c.fill_region_two.unwrap_or(true),
            )?;
            let max = grid.magnitudes().into_iter().fold(0.0, f64::max);
            Ok(CommandOutput {
                text: pick(grid.to_csv(), grid.to_json() + "\n"),
                summary: json!({ "samples": grid.len(), "max_abs_B_T": max }),
                failed: None,
            })
        }
        CommandKind::DmagCurve => {
            let p = profile(c)?;
            let base = geometry(c)?;
            let ds = distances(c)?;
            let mus = c.mu_r_ii_list.clone().expect("resolved list");
            if mus.is_empty() {
                return Err(CliError::Config("mu_r_II_list is empty".into()));
            }
            let mut rows = Vec::with_capacity(ds.len() * mus.len());
            for &mu in &mus {
                for &d in &ds {
                    rows.push(d_mag_for(&p, &base.with_distance(d).with_mu_r2(mu))?);
                }
            }
            Ok(CommandOutput {
                text: pick(d_mag_sweep_csv(&rows), to_json(&rows)),
                summary: json!({ "rows": rows.len(), "method": rows[0].method.label() }),
                failed: None,
            })
        }
        CommandKind::CylCompare => {
            let [l0, l1] = c.lambda_range.expect("resolved");
            let [d0, d1] = c.delta_range.expect("resolved");
            let map = compare_map((l0, l1), (d0, d1), c.grid.expect("resolved"), &SeriesOptions::default())?;
            let worst = map.cells.iter().map(|x| x.rel_diff.abs()).fold(0.0, f64::max);
            Ok(CommandOutput {
                text: pick(map.to_csv(), to_json(&map)),
                summary: json!({ "cells": map.cells.len(), "max_abs_rel_diff": worst, "contour_points": map.identical_contour.len() }),
                failed: None,
            })
        }
        CommandKind::DeadLayer => {
            let ds = distances(c)?;
            let rows = dead_layer_curve(
                &ds,
                c.dmin_list_hz.as_deref().expect("resolved"),
                c.mu_r_active.expect("resolved"),
                c.mu_r_i.expect("resolved"),
            )?;
            let worst = rows.iter().map(|r| r.delta_t).fold(0.0, f64::max);
            Ok(CommandOutput {
                text: pick(dead_layer_csv(&rows), to_json(&rows)),
                summary: json!({ "rows": rows.len(), "max_delta_t_m": worst }),
                failed: None,
            })
        }
        CommandKind::Detectability => {
            let ds = distances(c)?;
            let model = sensitivity(c)?;
            let mats = c.materials.clone().expect("resolved");
            let table = detectability_curve(&mats, &ds, &model, c.mu_r_i.expect("resolved"))?;
            Ok(CommandOutput {
                text: pick(table.to_csv(), to_json(&table)),
                summary: json!({ "model": model.label(), "crossings": table.crossings }),
                failed: None,
            })
        }
        CommandKind::ProtocolSim => {
            let p = profile(c)?;
            let g = geometry(c)?;
            let d_mag = d_mag_for(&p, &g)?;
            let d_true = D_GS_HZ + d_mag.value_hz;
            let reference = d_true + c.reference_offset_hz.expect("resolved");
            let [t0, t1] = c.tau_range_s.expect("resolved");
            let taus = tau_grid(t0, t1, c.tau_points.expect("resolved"))?;
            let seed = c.seed.expect("resolved");
            let opts = FringeOptions {
                reference_hz: reference,
                shot_noise: c.shots.map(|shots| ShotNoise { shots, seed }),
                t2: c.t2_s,
            };
            let fringe = ramsey_fringe(d_true, &taus, &opts)?;
            let est = estimate_d(&fringe, reference)?;
            let summary = json!({
                "D_true_Hz": d_true,
                "D_mag_Hz": d_mag.value_hz,
                "reference_Hz": reference,
                "D_fit_Hz": est.d_hz,
                "standard_error_Hz": est.standard_error_hz,
            });
            let json_text = to_json(&json!({ "fringe": fringe, "estimate": est, "D_true_Hz": d_true }));
            Ok(CommandOutput {
                text: pick(fringe.to_csv(), json_text),
                summary,
                failed: None,
            })
        }
        CommandKind::OracleVerify => {
            let manifest = match &c.oracle_manifest {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
                    RegressionManifest::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?
                }
                None => crate::oracle::default_regression_manifest(),
            };
            let outcomes = manifest
                .cases
                .iter()
                .map(evaluate_case)
                .collect::<Result<Vec<_>, _>>()?;
            let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
            let seeds: Vec<u64> = manifest.cases.iter().map(|k| k.spec.seed).collect();
            Ok(CommandOutput {
                text: pick(outcomes_csv(&outcomes), to_json(&outcomes)),
                summary: json!({ "cases": outcomes.len(), "failed": failed, "seeds": seeds }),
                failed: (!failed.is_empty()).then(|| format!("oracle cases failed: {}", failed.join(", "))),
            })
        }
    }
}

/// Writes `contents` next to its final location and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Loads, merges and runs; writes the output and its manifest.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let file_cfg = match &cli.overrides.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text, &path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    let cfg = resolve(cli.command, apply_overrides(file_cfg, &cli.overrides)?)?;
    let out = execute(&cfg)?;
    let output = cfg.output.clone().expect("resolved output");
    write_atomic(&output, out.text.as_bytes())?;
    let manifest = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "seed": cfg.seed,
        "output": output.file_name().map(|n| n.to_string_lossy().into_owned()),
        "summary": out.summary,
    });
    write_atomic(&manifest_path(&output), to_json(&manifest).as_bytes())?;
    match out.failed {
        Some(msg) => Err(CliError::Physics(msg)),
        None => Ok(()),
    }
}

/// Configures the global thread pool from the environment.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(CliError::Config(format!("{THREADS_ENV} must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_name_the_field() {
        let err = parse_config(r#"{"d_m": 1e-9, "mu_r_II": "zero"}"#, "cfg.json").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("mu_r_II"), "{err}");
        let err = parse_config(r#"{"d_m": 1e-9, "bogus": 1}"#, "cfg.json").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = parse_config("{\n  \"d_m\": 1e-9,\n", "cfg.json").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let cfg = parse_config(
            r#"{"d_m": 1e-9, "dmin_hz": 100, "profile": {"kind": "sphericalBessel", "R_m": 2e-10}}"#,
            "c",
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "magenergy",
            "dead-layer",
            "--dmin-hz",
            "200",
            "--R-m",
            "3e-10",
            "-o",
            "x.csv",
        ])
        .unwrap();
        let merged = resolve(cli.command, apply_overrides(cfg, &cli.overrides).unwrap()).unwrap();
        assert_eq!(merged.dmin_hz, Some(200.0));
        assert_eq!(merged.d_m, Some(1e-9));
        assert_eq!(merged.profile.unwrap().radius, Some(3e-10));
        assert_eq!(merged.dmin_list_hz, Some(vec![200.0]));
    }

    #[test]
    fn command_mismatch_is_a_config_error() {
        let cfg = RunConfig {
            command: Some(CommandKind::FieldMap),
            output: Some("a".into()),
            ..Default::default()
        };
        assert_eq!(resolve(CommandKind::DeadLayer, cfg).unwrap_err().exit_code(), 2);
        assert_eq!(
            resolve(CommandKind::DeadLayer, RunConfig::default())
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::InvalidGeometry("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::QuadratureFailure("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::OutOfValidity("x".into())).exit_code(), 3);
        assert_eq!(CliError::Io("x".into()).exit_code(), 4);
    }

    #[test]
    fn dmag_curve_uses_the_four_materials() {
        let cfg = resolve(
            CommandKind::DmagCurve,
            RunConfig {
                d_points: Some(3),
                output: Some("o".into()),
                ..Default::default()
            },
        )
        .unwrap();
        let out = execute(&cfg).unwrap();
        let lines: Vec<&str> = out.text.lines().collect();
        assert_eq!(lines[0], "d_m,mu_r_II,D_mag_Hz,method,err_Hz");
        assert_eq!(lines.len(), 1 + 12);
    }
}
