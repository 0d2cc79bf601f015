//! Special functions needed by the density profiles and the multipole
//! machinery. Bessel functions are only evaluated on `[0, j₀,₁]`, where
//! the power series converges to machine precision in a few terms.

/// First positive zero of J₀.
pub const BESSEL_J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

fn bessel_series(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    let mut term = 1.0;
    for k in 1..=order {
        term *= half / k as f64;
    }
    let mut sum = term;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + order as f64));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Bessel function of the first kind, order 0 (power series, |x| ≲ 10).
pub fn bessel_j0(x: f64) -> f64 {
    debug_assert!(x.abs() <= 12.0, "series evaluation only valid for moderate arguments");
    bessel_series(0, x)
}

/// Bessel function of the first kind, order 1 (power series, |x| ≲ 10).
pub fn bessel_j1(x: f64) -> f64 {
    debug_assert!(x.abs() <= 12.0, "series evaluation only valid for moderate arguments");
    bessel_series(1, x)
}

/// Spherical Bessel j₀(x) = sin x / x.
pub fn spherical_j0(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Derivative of sin x / x.
pub fn spherical_j0_prime(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        -x / 3.0 + x * x2 / 30.0 - x * x2 * x2 / 840.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

/// Legendre polynomials P₀..=P_lmax at `x`.
pub fn legendre_table(lmax: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if lmax == 0 {
        return;
    }
    out.push(x);
    for l in 1..lmax {
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * x * out[l] - lf * out[l - 1]) / (lf + 1.0);
        out.push(next);
    }
}

/// Derivatives P'₀..=P'_lmax given the table of P_l (needs P up to lmax).
///
/// Uses P'_{l+1} = P'_{l-1} + (2l+1) P_l, which stays finite at x = ±1.
pub fn legendre_derivative_table(p: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let n = p.len();
    if n == 0 {
        return;
    }
    out.push(0.0);
    if n == 1 {
        return;
    }
    out.push(1.0);
    for l in 1..n - 1 {
        let prev = out[l - 1];
        out.push(prev + (2.0 * l as f64 + 1.0) * p[l]);
    }
}
