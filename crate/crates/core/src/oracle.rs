//! Brute-force reference computations: direct quadrature of the field energy
//! with explicitly mirrored currents, Green's-function vector potentials,
//! Monte Carlo moment integrals, finite-difference vector calculus and
//! spin-matrix expectation values.
//!
//! Nothing here reuses the closed forms of the other modules; every integral
//! is evaluated from the current density `j = ∇P × m` and the free-space
//! kernel `1/|x − x′|`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::constants::CONSTANTS;
use crate::cylindrical::{d_mag_cylindrical, image_moment_q, SeriesOptions};
use crate::energy::{classical_energy, d_mag_spherical, image_energy, DMethod, EffectiveD};
use crate::error::{Error, Result};
use crate::geometry::{permeability_contrast, validate_spin, ProbeGeometry};
use crate::magnetostatics::moment_vector;
use crate::profile::{ProfileSpec, SpinDensityProfile, Support};
use crate::quad::{pairwise_sum, GaussLegendre};
use crate::special::legendre_table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "tensorGaussLegendre")]
    TensorGaussLegendre,
    #[serde(rename = "adaptiveNested")]
    AdaptiveNested,
    #[serde(rename = "monteCarlo")]
    MonteCarlo,
}

/// How an oracle integral is evaluated.
///
/// `points` is the Gauss–Legendre order per dimension for the tensor rule,
/// the largest order tried by the nested rule, and the sample count for
/// Monte Carlo. `tolerance` is relative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub scheme: Scheme,
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    pub tolerance: f64,
}

impl QuadratureSpec {
    pub fn tensor(points: usize) -> Self {
        Self {
            scheme: Scheme::TensorGaussLegendre,
            points,
            seed: 0,
            tolerance: 0.0,
        }
    }

    pub fn adaptive(tolerance: f64) -> Self {
        Self {
            scheme: Scheme::AdaptiveNested,
            points: 40,
            seed: 0,
            tolerance,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            scheme: Scheme::MonteCarlo,
            points: samples,
            seed,
            tolerance: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let min = if self.scheme == Scheme::MonteCarlo { 2 } else { 4 };
        if self.points < min {
            return Err(Error::InvalidArgument(format!(
                "{:?} needs at least {min} points",
                self.scheme
            )));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be finite and >= 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// A scalar oracle result. `converged` is false when the requested tolerance
/// was not met; the value is still the best available estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    pub evaluations: u64,
}

/// A vector oracle result; `error` bounds the Euclidean norm of the deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleVector {
    pub value: Vector3<f64>,
    pub error: f64,
    pub converged: bool,
}

/// Energy ½∫ j·(A + Ã) d³x split into the self and image parts (J).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEnergy {
    pub self_energy: OracleValue,
    pub image_energy: OracleValue,
    pub total: f64,
    pub total_error: f64,
}

/// Smallest order tried by the nested rule.
const NESTED_START: usize = 8;
const NESTED_STEP: usize = 4;
const MC_CHUNK: usize = 4096;

/// Runs a Gauss–Legendre family `eval(n)` according to the spec.
fn run_family<F: Fn(usize) -> (f64, u64)>(spec: &QuadratureSpec, eval: F) -> OracleValue {
    let close = |a: f64, b: f64| (a - b).abs() <= spec.tolerance * a.abs().max(b.abs());
    match spec.scheme {
        Scheme::TensorGaussLegendre => {
            let n = spec.points;
            let (hi, e1) = eval(n);
            let (lo, e2) = eval(n - (n / 4).max(2));
            OracleValue {
                value: hi,
                error: (hi - lo).abs(),
                converged: close(hi, lo),
                evaluations: e1 + e2,
            }
        }
        _ => {
            let mut n = NESTED_START.min(spec.points);
            let (mut prev, mut evals) = eval(n);
            loop {
                let next = (n + NESTED_STEP).min(spec.points);
                if next == n {
                    return OracleValue {
                        value: prev,
                        error: f64::INFINITY,
                        converged: false,
                        evaluations: evals,
                    };
                }
                n = next;
                let (cur, e) = eval(n);
                evals += e;
                let error = (cur - prev).abs();
                if close(cur, prev) || n == spec.points {
                    return OracleValue {
                        value: cur,
                        error,
                        converged: close(cur, prev),
                        evaluations: evals,
                    };
                }
                prev = cur;
            }
        }
    }
}

/// Mean and standard error of `sample(rng)` over `spec.points` draws.
///
/// Each chunk of samples owns its own ChaCha stream keyed by the chunk index,
/// so the result is independent of the thread count.
fn run_monte_carlo<F>(spec: &QuadratureSpec, sample: F) -> OracleValue
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let n = spec.points;
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(n - c * MC_CHUNK);
            let vals: Vec<f64> = (0..count).map(|_| sample(&mut rng)).collect();
            let s = pairwise_sum(&vals);
            let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
            (s, pairwise_sum(&sq))
        })
        .collect();
    let sum = pairwise_sum(&partial.iter().map(|p| p.0).collect::<Vec<_>>());
    let sumsq = pairwise_sum(&partial.iter().map(|p| p.1).collect::<Vec<_>>());
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sumsq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    let error = (var / nf).sqrt();
    let converged = spec.tolerance == 0.0 || error <= spec.tolerance * mean.abs();
    OracleValue {
        value: mean,
        error,
        converged,
        evaluations: n as u64,
    }
}

fn support_volume(support: &Support) -> f64 {
    match *support {
        Support::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
        Support::Cylinder { radius, half_height } => 2.0 * PI * radius * radius * half_height,
    }
}

fn sample_support(support: &Support, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let (u, v, w): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let phi = 2.0 * PI * w;
    match *support {
        Support::Sphere { radius } => {
            let r = radius * u.cbrt();
            let ct = 2.0 * v - 1.0;
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            Vector3::new(r * st * phi.cos(), r * st * phi.sin(), r * ct)
        }
        Support::Cylinder { radius, half_height } => {
            let rho = radius * u.sqrt();
            Vector3::new(rho * phi.cos(), rho * phi.sin(), half_height * (2.0 * v - 1.0))
        }
    }
}

/// Uniform azimuth nodes; the trapezoid rule is spectrally accurate for
/// periodic integrands.
fn azimuths(count: usize) -> Vec<f64> {
    (0..count).map(|k| 2.0 * PI * (k as f64 + 0.5) / count as f64).collect()
}

/// Tensor-product volume rule over the support with order `n` in each
/// non-periodic direction and `2n` azimuths.
fn volume_nodes(support: &Support, n: usize) -> Vec<(Vector3<f64>, f64)> {
    let gl = GaussLegendre::new(n);
    let phis = azimuths(2 * n);
    let wphi = PI / n as f64;
    let mut out = Vec::with_capacity(2 * n * n * n);
    match *support {
        Support::Sphere { radius } => {
            let rs = gl.composite(0.0, radius, 1);
            let cs = gl.composite(-1.0, 1.0, 1);
            for &(r, wr) in &rs {
                for &(ct, wc) in &cs {
                    let st = (1.0 - ct * ct).sqrt();
                    for &phi in &phis {
                        let x = Vector3::new(r * st * phi.cos(), r * st * phi.sin(), r * ct);
                        out.push((x, wr * r * r * wc * wphi));
                    }
                }
            }
        }
        Support::Cylinder { radius, half_height } => {
            let rs = gl.composite(0.0, radius, 1);
            let zs = gl.composite(-half_height, half_height, 1);
            for &(rho, wr) in &rs {
                for &(z, wz) in &zs {
                    for &phi in &phis {
                        let x = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
                        out.push((x, wr * rho * wz * wphi));
                    }
                }
            }
        }
    }
    out
}

fn mirror(x: &Vector3<f64>, d: f64) -> Vector3<f64> {
    Vector3::new(x.x, x.y, 2.0 * d - x.z)
}

fn kernel_prefactor(geom: &ProbeGeometry) -> f64 {
    CONSTANTS.mu0 * geom.mu_r1 / (4.0 * PI)
}

/// Current density of the spin, `∇P × m`.
fn current(profile: &SpinDensityProfile, m: &Vector3<f64>, x: &Vector3<f64>) -> Vector3<f64> {
    profile.gradient(x).cross(m)
}

/// Image current at the mirror image `σx` of a support point `x`:
/// `Δμ_r (σ∇P(x)) × (−m_x, −m_y, m_z)`.
fn image_current_at_mirror(profile: &SpinDensityProfile, m: &Vector3<f64>, dm: f64, x: &Vector3<f64>) -> Vector3<f64> {
    let g = profile.gradient(x);
    let g = Vector3::new(g.x, g.y, -g.z);
    dm * g.cross(&Vector3::new(-m.x, -m.y, m.z))
}

/// Weighted point currents `(position, w·j)`.
struct Sources {
    pos: Vec<Vector3<f64>>,
    wj: Vec<Vector3<f64>>,
}

fn direct_sources(profile: &SpinDensityProfile, m: &Vector3<f64>, nodes: &[(Vector3<f64>, f64)]) -> Sources {
    let (pos, wj) = nodes.iter().map(|(x, w)| (*x, *w * current(profile, m, x))).unzip();
    Sources { pos, wj }
}

fn image_sources(
    profile: &SpinDensityProfile,
    m: &Vector3<f64>,
    dm: f64,
    d: f64,
    nodes: &[(Vector3<f64>, f64)],
) -> Sources {
    let (pos, wj) = nodes
        .iter()
        .map(|(x, w)| (mirror(x, d), *w * image_current_at_mirror(profile, m, dm, x)))
        .unzip();
    Sources { pos, wj }
}

/// `Σ_i Σ_k a_i·b_k / |x_i − x_k|` with a fixed reduction order.
fn interaction_sum(a: &Sources, b: &Sources) -> f64 {
    let rows: Vec<f64> = a
        .pos
        .par_iter()
        .zip(&a.wj)
        .map(|(xa, ja)| {
            let terms: Vec<f64> = b
                .pos
                .iter()
                .zip(&b.wj)
                .map(|(xb, jb)| ja.dot(jb) / (xa - xb).norm())
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&rows)
}

/// Direction rule on the unit sphere: `n` polar GL nodes times `2n` azimuths.
fn direction_nodes(n: usize) -> Vec<(Vector3<f64>, f64)> {
    let gl = GaussLegendre::new(n);
    let phis = azimuths(2 * n);
    let wphi = PI / n as f64;
    let mut out = Vec::with_capacity(2 * n * n);
    for (&ct, &wc) in gl.nodes.iter().zip(&gl.weights) {
        let st = (1.0 - ct * ct).sqrt();
        for &phi in &phis {
            out.push((Vector3::new(st * phi.cos(), st * phi.sin(), ct), wc * wphi));
        }
    }
    out
}

/// `∫ j(x′)/|x − x′| d³x′` for `x` inside the support, in polar coordinates
/// centred on `x` so that the `1/s` singularity cancels against `s² ds`.
fn centred_green_integral(
    profile: &SpinDensityProfile,
    m: &Vector3<f64>,
    x: &Vector3<f64>,
    dirs: &[(Vector3<f64>, f64)],
    radial: &GaussLegendre,
) -> Vector3<f64> {
    let support = profile.support();
    let mut acc = Vector3::zeros();
    for (omega, wo) in dirs {
        let exit = support.ray_exit(x, omega);
        if exit <= 0.0 {
            continue;
        }
        let h = 0.5 * exit;
        let mut line = Vector3::zeros();
        for (t, wt) in radial.nodes.iter().zip(&radial.weights) {
            let s = h * (1.0 + t);
            line += (*wt * s) * current(profile, m, &(x + s * omega));
        }
        acc += (*wo * h) * line;
    }
    acc
}

fn check_oracle_inputs(profile: &SpinDensityProfile, geom: &ProbeGeometry, spec: &QuadratureSpec) -> Result<()> {
    spec.validate()?;
    geom.validate_with(profile)?;
    Ok(())
}

/// Image part ½∫ j·Ã d³x, with Ã the Green's integral of the mirrored current.
fn image_energy_oracle(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    spec: &QuadratureSpec,
) -> Result<OracleValue> {
    let dm = permeability_contrast(geom)?;
    let m = moment_vector(geom);
    let support = profile.support();
    let c = 0.5 * kernel_prefactor(geom);
    if spec.scheme == Scheme::MonteCarlo {
        let vol = support_volume(&support);
        return Ok(run_monte_carlo(spec, |rng| {
            let x = sample_support(&support, rng);
            let y = sample_support(&support, rng);
            let xi = mirror(&y, geom.d);
            let j = current(profile, &m, &x);
            let ji = image_current_at_mirror(profile, &m, dm, &y);
            c * vol * vol * j.dot(&ji) / (x - xi).norm()
        }));
    }
    Ok(run_family(spec, |n| {
        let nodes = volume_nodes(&support, n);
        let a = direct_sources(profile, &m, &nodes);
        let b = image_sources(profile, &m, dm, geom.d, &nodes);
        (c * interaction_sum(&a, &b), (nodes.len() * nodes.len()) as u64)
    }))
}

/// Self part ½∫ j·A d³x.
fn self_energy_oracle(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    spec: &QuadratureSpec,
) -> Result<OracleValue> {
    let m = moment_vector(geom);
    let support = profile.support();
    let c = 0.5 * kernel_prefactor(geom);
    if spec.scheme == Scheme::MonteCarlo {
        let vol = support_volume(&support);
        return Ok(run_monte_carlo(spec, |rng| {
            let x = sample_support(&support, rng);
            let y = sample_support(&support, rng);
            c * vol * vol * current(profile, &m, &x).dot(&current(profile, &m, &y)) / (x - y).norm()
        }));
    }
    Ok(run_family(spec, |n| {
        let nodes = volume_nodes(&support, n);
        let dirs = direction_nodes(n);
        let radial = GaussLegendre::new(n);
        let terms: Vec<f64> = nodes
            .par_iter()
            .map(|(x, w)| {
                let j = current(profile, &m, x);
                if j == Vector3::zeros() {
                    return 0.0;
                }
                w * j.dot(&centred_green_integral(profile, &m, x, &dirs, &radial))
            })
            .collect();
        (c * pairwise_sum(&terms), (nodes.len() * dirs.len() * n) as u64)
    }))
}

/// Brute-force magnetic energy ½∫ j·(A + Ã) d³x (J) at tilt `eta`.
///
/// The self part depends on the regularizing density and diverges as the
/// support shrinks; it is evaluated with the singular point at the centre of
/// a polar inner rule.
pub fn oracle_energy(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    eta: f64,
    spec: &QuadratureSpec,
) -> Result<OracleEnergy> {
    let geom = geom.with_eta(eta);
    check_oracle_inputs(profile, &geom, spec)?;
    let self_energy = self_energy_oracle(profile, &geom, spec)?;
    let image_energy = image_energy_oracle(profile, &geom, spec)?;
    Ok(OracleEnergy {
        self_energy,
        image_energy,
        total: self_energy.value + image_energy.value,
        total_error: self_energy.error + image_energy.error,
    })
}

/// Image part of [`oracle_energy`] alone, which is all the sensing
/// quantities depend on.
pub fn oracle_image_energy(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    eta: f64,
    spec: &QuadratureSpec,
) -> Result<OracleValue> {
    let geom = geom.with_eta(eta);
    check_oracle_inputs(profile, &geom, spec)?;
    image_energy_oracle(profile, &geom, spec)
}

fn run_vector_family<F: Fn(usize) -> Vector3<f64>>(spec: &QuadratureSpec, eval: F) -> OracleVector {
    // Scalar convergence is tracked on the Euclidean norm of the difference.
    let close = |a: &Vector3<f64>, b: &Vector3<f64>| (a - b).norm() <= spec.tolerance * a.norm().max(b.norm());
    match spec.scheme {
        Scheme::TensorGaussLegendre => {
            let n = spec.points;
            let hi = eval(n);
            let lo = eval(n - (n / 4).max(2));
            OracleVector {
                value: hi,
                error: (hi - lo).norm(),
                converged: close(&hi, &lo),
            }
        }
        _ => {
            let mut n = NESTED_START.min(spec.points);
            let mut prev = eval(n);
            loop {
                let next = (n + NESTED_STEP).min(spec.points);
                if next == n {
                    return OracleVector {
                        value: prev,
                        error: f64::INFINITY,
                        converged: false,
                    };
                }
                n = next;
                let cur = eval(n);
                if close(&cur, &prev) || n == spec.points {
                    return OracleVector {
                        value: cur,
                        error: (cur - prev).norm(),
                        converged: close(&cur, &prev),
                    };
                }
                prev = cur;
            }
        }
    }
}

fn run_vector_monte_carlo<F>(spec: &QuadratureSpec, sample: F) -> OracleVector
where
    F: Fn(&mut ChaCha8Rng) -> Vector3<f64> + Sync,
{
    let parts: Vec<OracleValue> = (0..3).map(|k| run_monte_carlo(spec, |rng| sample(rng)[k])).collect();
    let value = Vector3::new(parts[0].value, parts[1].value, parts[2].value);
    let error = parts.iter().map(|p| p.error * p.error).sum::<f64>().sqrt();
    let converged = spec.tolerance == 0.0 || error <= spec.tolerance * value.norm();
    OracleVector {
        value,
        error,
        converged,
    }
}

/// Green's integral `μ₀μ_r/4π ∫ j(x′)/|x − x′| d³x′` of the spin's own
/// current (T·m, Cartesian). Points inside the support use an inner polar
/// rule centred on `x`.
pub fn oracle_vector_potential(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    x: &Vector3<f64>,
    spec: &QuadratureSpec,
) -> Result<OracleVector> {
    check_oracle_inputs(profile, geom, spec)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("evaluation point must be finite".into()));
    }
    let m = moment_vector(geom);
    let c = kernel_prefactor(geom);
    let support = profile.support();
    let inside = support.contains(x);
    let mut out = if spec.scheme == Scheme::MonteCarlo {
        let vol = support_volume(&support);
        run_vector_monte_carlo(spec, |rng| {
            let y = sample_support(&support, rng);
            let s = (x - y).norm();
            if s == 0.0 {
                Vector3::zeros()
            } else {
                vol * current(profile, &m, &y) / s
            }
        })
    } else if inside {
        run_vector_family(spec, |n| {
            centred_green_integral(profile, &m, x, &direction_nodes(n), &GaussLegendre::new(n))
        })
    } else {
        run_vector_family(spec, |n| {
            let nodes = volume_nodes(&support, n);
            let terms: Vec<Vector3<f64>> = nodes
                .iter()
                .map(|(y, w)| *w * current(profile, &m, y) / (x - y).norm())
                .collect();
            sum_vectors(&terms)
        })
    };
    out.value *= c;
    out.error *= c;
    Ok(out)
}

/// Green's integral of the mirrored current (T·m, Cartesian) at a region-I point.
pub fn oracle_image_vector_potential(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    x: &Vector3<f64>,
    spec: &QuadratureSpec,
) -> Result<OracleVector> {
    check_oracle_inputs(profile, geom, spec)?;
    if !(x.z < geom.d && x.iter().all(|v| v.is_finite())) {
        return Err(Error::Region(format!(
            "z = {:e} m is not below the interface at {:e} m",
            x.z, geom.d
        )));
    }
    let dm = permeability_contrast(geom)?;
    let m = moment_vector(geom);
    let c = kernel_prefactor(geom);
    let support = profile.support();
    let mut out = if spec.scheme == Scheme::MonteCarlo {
        let vol = support_volume(&support);
        run_vector_monte_carlo(spec, |rng| {
            let y = sample_support(&support, rng);
            vol * image_current_at_mirror(profile, &m, dm, &y) / (x - mirror(&y, geom.d)).norm()
        })
    } else {
        run_vector_family(spec, |n| {
            let nodes = volume_nodes(&support, n);
            let src = image_sources(profile, &m, dm, geom.d, &nodes);
            let terms: Vec<Vector3<f64>> = src.pos.iter().zip(&src.wj).map(|(y, wj)| wj / (x - y).norm()).collect();
            sum_vectors(&terms)
        })
    };
    out.value *= c;
    out.error *= c;
    Ok(out)
}

fn sum_vectors(terms: &[Vector3<f64>]) -> Vector3<f64> {
    let comp = |k: usize| pairwise_sum(&terms.iter().map(|v| v[k]).collect::<Vec<_>>());
    Vector3::new(comp(0), comp(1), comp(2))
}

/// Curl and divergence of a vector field from finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdResult {
    pub curl: Vector3<f64>,
    pub divergence: f64,
    /// Richardson error estimate for the curl (Euclidean norm).
    pub curl_error: f64,
    pub divergence_error: f64,
    /// Non-empty when a central stencil could not be evaluated and a
    /// one-sided stencil was used instead.
    pub warnings: Vec<String>,
}

/// Jacobian column `∂F/∂x_k` by second-order differences at steps `h` and
/// `h/2`, combined by Richardson extrapolation.
fn fd_column<F>(
    field: &F,
    x: &Vector3<f64>,
    k: usize,
    h: f64,
    warnings: &mut Vec<String>,
) -> Result<(Vector3<f64>, Vector3<f64>)>
where
    F: Fn(&Vector3<f64>) -> Result<Vector3<f64>>,
{
    let e = Vector3::ith(k, 1.0);
    let central = |h: f64| -> Result<Vector3<f64>> { Ok((field(&(x + h * e))? - field(&(x - h * e))?) / (2.0 * h)) };
    // Second-order one-sided stencil in direction `sign`.
    let one_sided = |h: f64, sign: f64| -> Result<Vector3<f64>> {
        let f0 = field(x)?;
        let f1 = field(&(x + sign * h * e))?;
        let f2 = field(&(x + 2.0 * sign * h * e))?;
        Ok(sign * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h))
    };
    let richardson = |a: Vector3<f64>, b: Vector3<f64>| ((4.0 * b - a) / 3.0, (b - a) / 3.0);
    if let (Ok(a), Ok(b)) = (central(h), central(0.5 * h)) {
        return Ok(richardson(a, b));
    }
    for sign in [1.0, -1.0] {
        if let (Ok(a), Ok(b)) = (one_sided(h, sign), one_sided(0.5 * h, sign)) {
            let side = if sign > 0.0 { "forward" } else { "backward" };
            warnings.push(format!(
                "central stencil along axis {k} failed; used {side} differences"
            ));
            return Ok(richardson(a, b));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no finite-difference stencil along axis {k} can be evaluated at {x:?}"
    )))
}

/// Curl and divergence of `field` at `x` with base step `h`.
///
/// The callback returns an error where the field is undefined (across the
/// interface, say); the affected derivatives fall back to one-sided stencils.
pub fn fd_vector_calculus<F>(field: F, x: &Vector3<f64>, h: f64) -> Result<FdResult>
where
    F: Fn(&Vector3<f64>) -> Result<Vector3<f64>>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut warnings = Vec::new();
    let mut jac = [Vector3::zeros(); 3];
    let mut err = [Vector3::zeros(); 3];
    for k in 0..3 {
        let (d, e) = fd_column(&field, x, k, h, &mut warnings)?;
        jac[k] = d;
        err[k] = e;
    }
    // jac[k][i] = ∂F_i/∂x_k
    let curl = Vector3::new(jac[1][2] - jac[2][1], jac[2][0] - jac[0][2], jac[0][1] - jac[1][0]);
    let curl_err = Vector3::new(
        err[1][2].abs() + err[2][1].abs(),
        err[2][0].abs() + err[0][2].abs(),
        err[0][1].abs() + err[1][0].abs(),
    );
    Ok(FdResult {
        curl,
        divergence: jac[0][0] + jac[1][1] + jac[2][2],
        curl_error: curl_err.norm(),
        divergence_error: err[0][0].abs() + err[1][1].abs() + err[2][2].abs(),
        warnings,
    })
}

/// Meridian rule `(ρ, z, 2π·w·ρ)` for integrands that depend on azimuth
/// only through a difference of angles.
fn meridian_nodes(support: &Support, n: usize) -> Vec<(f64, f64, f64)> {
    let gl = GaussLegendre::new(n);
    let mut out = Vec::with_capacity(n * n);
    match *support {
        Support::Sphere { radius } => {
            for &(r, wr) in &gl.composite(0.0, radius, 1) {
                for &(ct, wc) in &gl.composite(-1.0, 1.0, 1) {
                    out.push((r * (1.0 - ct * ct).sqrt(), r * ct, 2.0 * PI * wr * r * r * wc));
                }
            }
        }
        Support::Cylinder { radius, half_height } => {
            for &(rho, wr) in &gl.composite(0.0, radius, 1) {
                for &(z, wz) in &gl.composite(-half_height, half_height, 1) {
                    out.push((rho, z, 2.0 * PI * wr * rho * wz));
                }
            }
        }
    }
    out
}

/// D_mag (Hz) for any axisymmetric density by direct quadrature of the
/// dipole–dipole kernel between the density and its mirror image:
/// `Δμ_r μ₀μ_r (gμ_B)²/(8πh) ∬ P(x)P(x′) P₂(cos θ_s)/s³`, `s = x − σx′`.
pub fn oracle_d_mag_cylindrical(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    spec: &QuadratureSpec,
) -> Result<EffectiveD> {
    check_oracle_inputs(profile, geom, spec)?;
    let dm = permeability_contrast(geom)?;
    let support = profile.support();
    let gmu = 2.0 * CONSTANTS.effective_magneton();
    let scale = dm * CONSTANTS.mu0 * geom.mu_r1 * gmu * gmu / (8.0 * PI * CONSTANTS.h);
    let kernel = |x: &Vector3<f64>, y: &Vector3<f64>| -> f64 {
        let s = x - mirror(y, geom.d);
        let s2 = s.norm_squared();
        let c2 = s.z * s.z / s2;
        0.5 * (3.0 * c2 - 1.0) / (s2 * s2.sqrt())
    };
    let res = if spec.scheme == Scheme::MonteCarlo {
        let vol = support_volume(&support);
        run_monte_carlo(spec, |rng| {
            let x = sample_support(&support, rng);
            let y = sample_support(&support, rng);
            vol * vol * profile.density(&x) * profile.density(&y) * kernel(&x, &y)
        })
    } else {
        run_family(spec, |n| {
            let outer = meridian_nodes(&support, n);
            let inner: Vec<(Vector3<f64>, f64)> = volume_nodes(&support, n)
                .into_iter()
                .map(|(y, w)| (y, w * profile.density(&y)))
                .collect();
            let rows: Vec<f64> = outer
                .par_iter()
                .map(|&(rho, z, w)| {
                    let x = Vector3::new(rho, 0.0, z);
                    let p = profile.density(&x);
                    if p == 0.0 {
                        return 0.0;
                    }
                    let terms: Vec<f64> = inner.iter().map(|(y, wy)| wy * kernel(&x, y)).collect();
                    w * p * pairwise_sum(&terms)
                })
                .collect();
            (pairwise_sum(&rows), (outer.len() * inner.len()) as u64)
        })
    };
    Ok(EffectiveD {
        value_hz: scale * res.value,
        method: DMethod::OracleQuadrature,
        error_estimate_hz: (scale * res.error).abs(),
        geometry: *geom,
        converged: res.converged,
    })
}

/// Image moment `Q_l = ∫ P(x) √((2l+1)/4π) P_l(cos θ_n)/r_n^{l+1} d³x` (m^-(l+1))
/// about the image point `(0, 0, 2d)`, by Monte Carlo over the support.
pub fn oracle_image_moment_mc(
    profile: &SpinDensityProfile,
    geom: &ProbeGeometry,
    l: usize,
    spec: &QuadratureSpec,
) -> Result<OracleValue> {
    check_oracle_inputs(profile, geom, spec)?;
    let support = profile.support();
    let vol = support_volume(&support);
    let norm = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
    let sample = |rng: &mut ChaCha8Rng| -> f64 {
        let mut pl = Vec::with_capacity(l + 1);
        let x = sample_support(&support, rng);
        let u = 2.0 * geom.d - x.z;
        let rn = x.xy().norm().hypot(u);
        legendre_table(l, u / rn, &mut pl);
        vol * profile.density(&x) * norm * pl[l] / rn.powi(l as i32 + 1)
    };
    match spec.scheme {
        Scheme::MonteCarlo => Ok(run_monte_carlo(spec, sample)),
        _ => Err(Error::InvalidArgument(
            "the moment cross-check is a Monte Carlo oracle".into(),
        )),
    }
}

/// Spin matrices for quantum number `j` in the basis `|j⟩, |j−1⟩, …, |−j⟩`.
/// `J_y` is imaginary, so only its square (real) is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinMatrices {
    pub jx: DMatrix<f64>,
    pub jz: DMatrix<f64>,
    pub jy_squared: DMatrix<f64>,
}

pub fn spin_matrices(j: f64) -> Result<SpinMatrices> {
    validate_spin(j)?;
    let dim = (2.0 * j).round() as usize + 1;
    let mut jz = DMatrix::zeros(dim, dim);
    // J₊ with ⟨m+1|J₊|m⟩ = √(j(j+1) − m(m+1))
    let mut jp = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mk = j - k as f64;
        jz[(k, k)] = mk;
        if k > 0 {
            jp[(k - 1, k)] = (j * (j + 1.0) - mk * (mk + 1.0)).sqrt();
        }
    }
    let jm = jp.transpose();
    let jx = 0.5 * (&jp + &jm);
    let diff = &jp - &jm;
    // J_y = (J₊ − J₋)/(2i), so J_y² = −(J₊ − J₋)²/4.
    let jy_squared = -0.25 * &diff * &diff;
    Ok(SpinMatrices { jx, jz, jy_squared })
}

/// The stretched state `|j, j⟩` along `(sin η, 0, cos η)`, found as the top
/// eigenvector of `sin η J_x + cos η J_z`.
pub fn spin_coherent_state(j: f64, eta: f64) -> Result<DVector<f64>> {
    let s = spin_matrices(j)?;
    let op = eta.sin() * &s.jx + eta.cos() * &s.jz;
    let eig = SymmetricEigen::new(op);
    let (top, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let mut v = eig.eigenvectors.column(top).into_owned();
    let (big, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty");
    if v[big] < 0.0 {
        v = -v;
    }
    Ok(v)
}

/// ⟨ψ|A|ψ⟩ for a real state.
fn expectation(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v))
}

/// Image part of ⟨j,j|H_mag|j,j⟩ (J) for a point spin, from the operator
/// `K_xx (J_x² + J_y²) + K_zz J_z²` built from the dipole tensor of the
/// image, evaluated in the numerically diagonalized coherent state.
pub fn oracle_h_mag_image(geom: &ProbeGeometry) -> Result<f64> {
    geom.validate()?;
    let dm = permeability_contrast(geom)?;
    let s = spin_matrices(geom.spin)?;
    let v = spin_coherent_state(geom.spin, geom.eta)?;
    let gmu = 2.0 * CONSTANTS.effective_magneton();
    // ½ Δμ_r μ₀μ_r/(4π) (gμ_B)² · diag(1, 1, 2)/(2d)³
    let k = 0.5 * dm * CONSTANTS.mu0 * geom.mu_r1 / (4.0 * PI) * gmu * gmu / (8.0 * geom.d.powi(3));
    let op = k * (&s.jx * &s.jx + &s.jy_squared) + 2.0 * k * (&s.jz * &s.jz);
    Ok(expectation(&op, &v))
}

/// ⟨ψ(η)|J_z²|ψ(η)⟩ for the coherent state of spin `j` tilted by `eta`.
pub fn oracle_jz2_expectation(j: f64, eta: f64) -> Result<f64> {
    let s = spin_matrices(j)?;
    let v = spin_coherent_state(j, eta)?;
    Ok(expectation(&(&s.jz * &s.jz), &v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "imageEnergy")]
    ImageEnergy,
    #[serde(rename = "selfEnergy")]
    SelfEnergy,
    #[serde(rename = "dMag")]
    DMag,
    #[serde(rename = "imageMomentQ")]
    ImageMomentQ,
}

impl Quantity {
    pub fn label(&self) -> &'static str {
        match self {
            Quantity::ImageEnergy => "imageEnergy",
            Quantity::SelfEnergy => "selfEnergy",
            Quantity::DMag => "dMag",
            Quantity::ImageMomentQ => "imageMomentQ",
        }
    }
}

/// One frozen oracle value: the geometry, the scheme that produced it and
/// the relative tolerance a re-run must meet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionCase {
    pub name: String,
    pub quantity: Quantity,
    /// Multipole order for `imageMomentQ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    pub profile: ProfileSpec,
    pub geometry: ProbeGeometry,
    pub spec: QuadratureSpec,
    pub expected: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionManifest {
    pub cases: Vec<RegressionCase>,
}

impl RegressionManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::InvalidArgument(format!("regression manifest: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub name: String,
    pub quantity: Quantity,
    pub expected: f64,
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    /// Value from the production code path, where one exists.
    pub closed_form: Option<f64>,
    pub passed: bool,
}

/// Runs the oracle for one case in SI units (J, Hz or m^-(l+1)).
pub fn evaluate_oracle(case: &RegressionCase) -> Result<OracleValue> {
    let profile = case.profile.build()?;
    let g = &case.geometry;
    match case.quantity {
        Quantity::ImageEnergy => oracle_image_energy(&profile, g, g.eta, &case.spec),
        Quantity::SelfEnergy => Ok(oracle_energy(&profile, g, g.eta, &case.spec)?.self_energy),
        Quantity::DMag => {
            let d = oracle_d_mag_cylindrical(&profile, g, &case.spec)?;
            Ok(OracleValue {
                value: d.value_hz,
                error: d.error_estimate_hz,
                converged: d.converged,
                evaluations: 0,
            })
        }
        Quantity::ImageMomentQ => {
            let l = case
                .l
                .ok_or_else(|| Error::InvalidArgument(format!("case {} needs `l`", case.name)))?;
            oracle_image_moment_mc(&profile, g, l, &case.spec)
        }
    }
}

/// The production value for the same quantity, for cross-checking.
pub fn production_value(case: &RegressionCase) -> Result<Option<f64>> {
    let profile = case.profile.build()?;
    let g = &case.geometry;
    Ok(match case.quantity {
        Quantity::ImageEnergy if profile.is_spherical() => Some(image_energy(g)?),
        Quantity::ImageEnergy => None,
        Quantity::SelfEnergy if profile.is_spherical() => Some(classical_energy(&profile, g)?.self_energy),
        Quantity::SelfEnergy => None,
        Quantity::DMag if profile.is_spherical() => Some(d_mag_spherical(g)?.value_hz),
        Quantity::DMag => Some(d_mag_cylindrical(&profile, g, &SeriesOptions::default())?.d.value_hz),
        Quantity::ImageMomentQ => Some(image_moment_q(&profile, g, case.l.unwrap_or(2))?.value),
    })
}

/// Re-runs a frozen case; it passes when the oracle converges and lands
/// within the case tolerance of the frozen value.
pub fn evaluate_case(case: &RegressionCase) -> Result<CaseOutcome> {
    let o = evaluate_oracle(case)?;
    let passed = o.converged && (o.value - case.expected).abs() <= case.tolerance * case.expected.abs();
    Ok(CaseOutcome {
        name: case.name.clone(),
        quantity: case.quantity,
        expected: case.expected,
        value: o.value,
        error: o.error,
        converged: o.converged,
        closed_form: production_value(case)?,
        passed,
    })
}

/// Frozen regression values shipped with the crate; `oracle-verify` runs
/// these when no manifest path is given.
pub const FROZEN_REGRESSION_JSON: &str = include_str!("../data/oracle_regression.json");

pub fn default_regression_manifest() -> RegressionManifest {
    RegressionManifest::from_json(FROZEN_REGRESSION_JSON).expect("bundled manifest parses")
}

/// The regression case set with unset expectations; freezing fills
/// `expected` from the oracle itself.
pub fn regression_templates() -> Vec<RegressionCase> {
    let sphere = ProfileSpec::spherical(2.5e-10);
    let cylinder = ProfileSpec::cylindrical(5e-10, 4e-10);
    let geom = |d: f64, mu2: f64, spin: f64, eta: f64| {
        ProbeGeometry::new(d, 1.0, mu2, spin, eta).expect("valid template geometry")
    };
    let case = |name: &str, quantity, l, profile: &ProfileSpec, geometry, spec, tolerance| RegressionCase {
        name: name.to_string(),
        quantity,
        l,
        profile: profile.clone(),
        geometry,
        spec,
        expected: 0.0,
        tolerance,
    };
    vec![
        case(
            "sphere_sc_image_energy",
            Quantity::ImageEnergy,
            None,
            &sphere,
            geom(1e-9, 0.0, 1.0, 0.0),
            QuadratureSpec::adaptive(1e-9),
            1e-7,
        ),
        case(
            "sphere_steel_image_energy_tilted",
            Quantity::ImageEnergy,
            None,
            &sphere,
            geom(2e-9, 100.0, 2.0, std::f64::consts::FRAC_PI_3),
            QuadratureSpec::adaptive(1e-9),
            1e-7,
        ),
        case(
            "sphere_self_energy",
            Quantity::SelfEnergy,
            None,
            &sphere,
            geom(1e-9, 0.0, 1.0, 0.0),
            QuadratureSpec::adaptive(1e-7),
            1e-5,
        ),
        case(
            "cylinder_sc_d_mag",
            Quantity::DMag,
            None,
            &cylinder,
            geom(2e-9, 0.0, 1.0, 0.0),
            QuadratureSpec {
                tolerance: 1e-6,
                ..QuadratureSpec::tensor(24)
            },
            1e-7,
        ),
        case(
            "cylinder_sc_image_energy",
            Quantity::ImageEnergy,
            None,
            &cylinder,
            geom(2e-9, 0.0, 1.0, std::f64::consts::FRAC_PI_2),
            QuadratureSpec::adaptive(1e-8),
            1e-6,
        ),
        case(
            "cylinder_q2_mc",
            Quantity::ImageMomentQ,
            Some(2),
            &cylinder,
            geom(2e-9, 0.0, 1.0, 0.0),
            QuadratureSpec::monte_carlo(200_000, 7),
            1e-12,
        ),
    ]
}

pub const ORACLE_VERIFY_CSV_HEADER: &str = "name,quantity,expected,oracle,error,closed_form,passed";

pub fn outcomes_csv(outcomes: &[CaseOutcome]) -> String {
    let mut out = String::from(ORACLE_VERIFY_CSV_HEADER);
    out.push('\n');
    for o in outcomes {
        let cf = o.closed_form.map(|v| format!("{v:e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{},{}\n",
            o.name,
            o.quantity.label(),
            o.expected,
            o.value,
            o.error,
            cf,
            o.passed
        ));
    }
    out
}
