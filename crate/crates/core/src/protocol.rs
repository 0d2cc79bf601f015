//! Ramsey measurement of the fine-structure splitting D on a spin-1 probe:
//! state propagation, noisy fringe generation and least-squares recovery.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-12;

/// Spin-1 amplitudes over the basis (|+1⟩, |0⟩, |−1⟩).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    pub amplitudes: [Complex64; 3],
}

impl SpinState {
    /// Optically initialized |J_z = 0⟩.
    pub fn initialized() -> Self {
        Self {
            amplitudes: [
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        }
    }

    pub fn new(amplitudes: [Complex64; 3]) -> Result<Self> {
        let s = Self { amplitudes };
        s.check_norm()?;
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn check_norm(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!("state norm is {n}, expected 1")));
        }
        Ok(())
    }

    /// Population of |J_z = 0⟩.
    pub fn p0(&self) -> f64 {
        self.amplitudes[1].norm_sqr()
    }
}

/// `exp(−i 2π x)` with the phase reduced modulo one turn first, so large
/// D·τ products keep full precision.
fn turn_phase(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * x.fract())
}

/// Free evolution under D·J_z²: the |±1⟩ amplitudes acquire exp(−i 2π D τ).
pub fn evolve(state: &SpinState, d_hz: f64, tau: f64) -> Result<SpinState> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "evolution time must be >= 0, got {tau}"
        )));
    }
    if !d_hz.is_finite() {
        return Err(Error::InvalidArgument(format!("D must be finite, got {d_hz}")));
    }
    let phase = turn_phase(d_hz * tau);
    let [p, z, m] = state.amplitudes;
    Ok(SpinState {
        amplitudes: [p * phase, z, m * phase],
    })
}

/// Ideal π/2 rotation about the axis at angle `phase` in the
/// {|0⟩, |B⟩ = (|+1⟩ + |−1⟩)/√2} subspace; |D⟩ = (|+1⟩ − |−1⟩)/√2 is untouched.
pub fn pi_half_pulse(state: &SpinState, phase: f64) -> SpinState {
    let [p, z, m] = state.amplitudes;
    let b = (p + m) * FRAC_1_SQRT_2;
    let dark = (p - m) * FRAC_1_SQRT_2;
    let c = FRAC_1_SQRT_2;
    let i = Complex64::new(0.0, 1.0);
    let e = Complex64::from_polar(1.0, phase);
    let z2 = c * z - i * e.conj() * c * b;
    let b2 = -i * e * c * z + c * b;
    SpinState {
        amplitudes: [(b2 + dark) * FRAC_1_SQRT_2, z2, (b2 - dark) * FRAC_1_SQRT_2],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PulseStep {
    PiHalfPulse { phase: f64 },
    FreeEvolution { tau: f64 },
    Readout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub steps: Vec<PulseStep>,
    pub reference_frequency_hz: f64,
}

impl PulseSequence {
    /// π/2 – wait τ – π/2 with the second pulse phase tracking a reference
    /// oscillator at `reference_hz`.
    pub fn ramsey(tau: f64, reference_hz: f64) -> Self {
        let phase = -2.0 * PI * (reference_hz * tau).fract();
        Self {
            steps: vec![
                PulseStep::PiHalfPulse { phase: 0.0 },
                PulseStep::FreeEvolution { tau },
                PulseStep::PiHalfPulse { phase },
                PulseStep::Readout,
            ],
            reference_frequency_hz: reference_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let readouts = self.steps.iter().filter(|s| matches!(s, PulseStep::Readout)).count();
        if readouts != 1 || !matches!(self.steps.last(), Some(PulseStep::Readout)) {
            return Err(Error::InvalidArgument(
                "a sequence must end with exactly one readout".into(),
            ));
        }
        Ok(())
    }

    /// Runs the sequence from |0⟩ and returns the |0⟩ population at readout.
    pub fn run(&self, d_hz: f64) -> Result<f64> {
        self.validate()?;
        let mut state = SpinState::initialized();
        for step in &self.steps {
            state = match *step {
                PulseStep::PiHalfPulse { phase } => pi_half_pulse(&state, phase),
                PulseStep::FreeEvolution { tau } => evolve(&state, d_hz, tau)?,
                PulseStep::Readout => return Ok(state.p0()),
            };
            state.check_norm()?;
        }
        unreachable!("validated sequences end with a readout")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoise {
    pub shots: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FringeOptions {
    pub reference_hz: f64,
    pub shot_noise: Option<ShotNoise>,
    /// Fringe contrast decays as exp(−τ/T₂) when set.
    pub t2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub tau: f64,
    pub p0: f64,
    pub shots: Option<u64>,
    pub counts: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fringe {
    pub reference_hz: f64,
    pub points: Vec<FringePoint>,
}

impl Fringe {
    pub fn to_csv(&self) -> String {
        let noisy = self.points.iter().any(|p| p.shots.is_some());
        let mut out = String::from(if noisy { "tau_s,p0,shots,counts\n" } else { "tau_s,p0\n" });
        for p in &self.points {
            match (p.shots, p.counts) {
                (Some(n), Some(k)) => out.push_str(&format!("{:e},{:e},{n},{k}\n", p.tau, p.p0)),
                _ => out.push_str(&format!("{:e},{:e}\n", p.tau, p.p0)),
            }
        }
        out
    }
}

/// |0⟩ population after π/2 – τ – π/2 at each τ. With shot noise, each point
/// is a binomial count out of `shots` drawn from one seeded stream.
pub fn ramsey_fringe(d_hz: f64, taus: &[f64], opts: &FringeOptions) -> Result<Fringe> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("tau list is empty".into()));
    }
    if let Some(t2) = opts.t2 {
        if !(t2 > 0.0) {
            return Err(Error::InvalidArgument(format!("T2 must be positive, got {t2}")));
        }
    }
    if matches!(opts.shot_noise, Some(ShotNoise { shots: 0, .. })) {
        return Err(Error::InvalidArgument("shot count must be positive".into()));
    }
    let mut rng = opts.shot_noise.map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut p = PulseSequence::ramsey(tau, opts.reference_hz).run(d_hz)?;
        if let Some(t2) = opts.t2 {
            p = 0.5 + (p - 0.5) * (-tau / t2).exp();
        }
        let p = p.clamp(0.0, 1.0);
        let point = match (opts.shot_noise, rng.as_mut()) {
            (Some(noise), Some(rng)) => {
                let dist = Binomial::new(noise.shots, p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let k = dist.sample(rng);
                FringePoint {
                    tau,
                    p0: k as f64 / noise.shots as f64,
                    shots: Some(noise.shots),
                    counts: Some(k),
                }
            }
            _ => FringePoint {
                tau,
                p0: p,
                shots: None,
                counts: None,
            },
        };
        points.push(point);
    }
    Ok(Fringe {
        reference_hz: opts.reference_hz,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DEstimate {
    pub d_hz: f64,
    pub standard_error_hz: f64,
    /// |D − reference| (Hz).
    pub detuning_hz: f64,
    pub contrast: f64,
    pub residual_rms: f64,
}

/// Linear least squares for (a, b, c) in a + b cos ωt + c sin ωt.
fn linear_fit(t: &[f64], y: &[f64], f: f64) -> Option<(Vector4<f64>, f64)> {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&ti, &yi) in t.iter().zip(y) {
        let (s, c) = (2.0 * PI * f * ti).sin_cos();
        let row = nalgebra::Vector3::new(1.0, c, s);
        ata += row * row.transpose();
        aty += row * yi;
    }
    let sol = ata.cholesky()?.solve(&aty);
    let rss: f64 = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let (s, c) = (2.0 * PI * f * ti).sin_cos();
            (yi - sol[0] - sol[1] * c - sol[2] * s).powi(2)
        })
        .sum();
    Some((Vector4::new(sol[0], sol[1], sol[2], f), rss))
}

fn residuals_and_jacobian(t: &[f64], y: &[f64], p: &Vector4<f64>) -> (Vec<f64>, Vec<Vector4<f64>>) {
    let mut r = Vec::with_capacity(t.len());
    let mut jac = Vec::with_capacity(t.len());
    for (&ti, &yi) in t.iter().zip(y) {
        let w = 2.0 * PI * ti;
        let (s, c) = (w * p[3]).sin_cos();
        r.push(yi - (p[0] + p[1] * c + p[2] * s));
        jac.push(Vector4::new(1.0, c, s, w * (-p[1] * s + p[2] * c)));
    }
    (r, jac)
}

/// Fits a + b cos 2πfτ + c sin 2πfτ to the fringe (periodogram start,
/// Levenberg–Marquardt refinement) and returns reference + |f| with the
/// covariance-based standard error of f.
pub fn estimate_d(fringe: &Fringe, reference_hz: f64) -> Result<DEstimate> {
    let n = fringe.points.len();
    if n < 8 {
        return Err(Error::FitFailure(format!("need at least 8 fringe points, got {n}")));
    }
    let span = fringe.points.iter().map(|p| p.tau).fold(f64::NEG_INFINITY, f64::max)
        - fringe.points.iter().map(|p| p.tau).fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(Error::FitFailure("fringe spans no time".into()));
    }
    // scaled time keeps the normal equations well conditioned
    let t: Vec<f64> = fringe.points.iter().map(|p| p.tau / span).collect();
    let y: Vec<f64> = fringe.points.iter().map(|p| p.p0).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::FitFailure("constant fringe: no oscillation to fit".into()));
    }
    let mut sorted = t.clone();
    sorted.sort_by(f64::total_cmp);
    let min_step = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let nyquist = 0.5 / min_step;
    let grid = (8.0 * nyquist).ceil() as usize;
    let mut best: Option<(Vector4<f64>, f64)> = None;
    for k in 1..=grid {
        let f = nyquist * k as f64 / grid as f64;
        if let Some((p, rss)) = linear_fit(&t, &y, f) {
            if best.as_ref().is_none_or(|b| rss < b.1) {
                best = Some((p, rss));
            }
        }
    }
    let (mut p, mut rss) =
        best.ok_or_else(|| Error::FitFailure("periodogram scan found no solvable frequency".into()))?;
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (r, jac) = residuals_and_jacobian(&t, &y, &p);
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (ri, ji) in r.iter().zip(&jac) {
            jtj += ji * ji.transpose();
            jtr += ji * *ri;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&jtr);
            let trial = p + step;
            let (rt, _) = residuals_and_jacobian(&t, &y, &trial);
            let rss_t: f64 = rt.iter().map(|v| v * v).sum();
            if rss_t <= rss {
                let done = (rss - rss_t) <= 1e-15 * rss.max(1e-300) || step.norm() <= 1e-14 * p.norm();
                p = trial;
                rss = rss_t;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                if done {
                    lambda = -1.0;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || lambda < 0.0 {
            break;
        }
    }
    let (_, jac) = residuals_and_jacobian(&t, &y, &p);
    let mut jtj = Matrix4::<f64>::zeros();
    for ji in &jac {
        jtj += ji * ji.transpose();
    }
    let bread = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("singular normal matrix: the fit is underdetermined".into()))?;
    // Binomial noise is heteroscedastic, so with known shot counts the
    // covariance uses the sandwich form with the fitted p(1 − p)/N per point.
    let shots: Option<Vec<f64>> = fringe.points.iter().map(|q| q.shots.map(|s| s as f64)).collect();
    let cov = match shots {
        Some(shots) => {
            let mut meat = Matrix4::<f64>::zeros();
            for ((ji, &ti), ni) in jac.iter().zip(&t).zip(&shots) {
                let (s, c) = (2.0 * PI * p[3] * ti).sin_cos();
                let pm = (p[0] + p[1] * c + p[2] * s).clamp(0.0, 1.0);
                meat += ji * ji.transpose() * (pm * (1.0 - pm) / ni);
            }
            bread * meat * bread
        }
        None => bread * (rss / (n - 4) as f64),
    };
    let f = p[3].abs() / span;
    let contrast = p[1].hypot(p[2]);
    if contrast <= 1e-9 {
        return Err(Error::FitFailure("fitted fringe has no contrast".into()));
    }
    if f * span < 1.0 {
        return Err(Error::FitFailure(format!(
            "fringe spans {:.3} periods; need at least one",
            f * span
        )));
    }
    let se = cov[(3, 3)].max(0.0).sqrt() / span;
    Ok(DEstimate {
        d_hz: reference_hz + f,
        standard_error_hz: se,
        detuning_hz: f,
        contrast,
        residual_rms: (rss / n as f64).sqrt(),
    })
}

/// `count` equally spaced times from `start` to `stop` inclusive.
pub fn tau_grid(start: f64, stop: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(stop > start) || start < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid tau grid [{start:e}, {stop:e}] x {count}"
        )));
    }
    Ok((0..count)
        .map(|k| start + (stop - start) * k as f64 / (count - 1) as f64)
        .collect())
}

/// Outcome of repeated noisy recoveries of a known D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureStats {
    pub trials: usize,
    pub within_three_sigma: usize,
    pub failures: usize,
    pub mean_error_hz: f64,
    pub mean_standard_error_hz: f64,
}

impl ClosureStats {
    pub fn coverage(&self) -> f64 {
        self.within_three_sigma as f64 / self.trials as f64
    }
}

/// Simulates `trials` noisy fringes (seeds `seed`, `seed + 1`, …) and fits each.
pub fn closure_trials(
    d_hz: f64,
    taus: &[f64],
    reference_hz: f64,
    shots: u64,
    trials: usize,
    seed: u64,
) -> Result<ClosureStats> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let outcomes: Vec<Option<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let opts = FringeOptions {
                reference_hz,
                shot_noise: Some(ShotNoise {
                    shots,
                    seed: seed.wrapping_add(k as u64),
                }),
                t2: None,
            };
            let fringe = ramsey_fringe(d_hz, taus, &opts).ok()?;
            let est = estimate_d(&fringe, reference_hz).ok()?;
            Some((est.d_hz - d_hz, est.standard_error_hz))
        })
        .collect();
    let ok: Vec<(f64, f64)> = outcomes.iter().flatten().copied().collect();
    let within = ok.iter().filter(|(e, se)| e.abs() <= 3.0 * se).count();
    let m = ok.len().max(1) as f64;
    Ok(ClosureStats {
        trials,
        within_three_sigma: within,
        failures: trials - ok.len(),
        mean_error_hz: ok.iter().map(|v| v.0).sum::<f64>() / m,
        mean_standard_error_hz: ok.iter().map(|v| v.1).sum::<f64>() / m,
    })
}
