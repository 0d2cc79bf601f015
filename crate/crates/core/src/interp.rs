//! Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidArgument("abscissa and ordinate lengths differ".into()));
        }
        if x.len() < 2 {
            return Err(Error::InvalidArgument("need at least two samples".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("samples must be finite".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("abscissae must be strictly increasing".into()));
        }
        let slopes = pchip_slopes(&x, &y);
        Ok(Self { x, y, slopes })
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value and derivative at `t`; clamps to the end values outside the table.
    pub fn eval_with_derivative(&self, t: f64) -> (f64, f64) {
        let n = self.x.len();
        if t <= self.x[0] {
            return (self.y[0], 0.0);
        }
        if t >= self.x[n - 1] {
            return (self.y[n - 1], 0.0);
        }
        let i = self.locate(t);
        hermite(
            self.x[i],
            self.x[i + 1],
            self.y[i],
            self.y[i + 1],
            self.slopes[i],
            self.slopes[i + 1],
            t,
        )
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).0
    }
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, m0: f64, m1: f64, t: f64) -> (f64, f64) {
    let h = x1 - x0;
    let s = (t - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
    let d00 = (6.0 * s2 - 6.0 * s) / h;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = (-6.0 * s2 + 6.0 * s) / h;
    let d11 = 3.0 * s2 - 2.0 * s;
    let deriv = d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1;
    (value, deriv)
}

/// PCHIP slopes: weighted harmonic mean of neighbouring secants, zero at extrema.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_knots_and_lines() {
        let f = MonotoneCubic::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 6.0]).unwrap();
        assert!((f.eval(2.0) - 4.0).abs() < 1e-14);
        assert!((f.eval_with_derivative(0.5).1 - 2.0).abs() < 1e-14);
        assert_eq!(f.eval(1.0), 2.0);
    }

    #[test]
    fn rejects_unsorted() {
        assert!(MonotoneCubic::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(MonotoneCubic::new(vec![0.0], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn preserves_monotonicity(mut ys in proptest::collection::vec(0.0f64..10.0, 3..12), t in 0.0f64..1.0) {
            ys.sort_by(|a, b| a.total_cmp(b));
            let n = ys.len();
            let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let f = MonotoneCubic::new(xs, ys.clone()).unwrap();
            let (v, d) = f.eval_with_derivative(t);
            prop_assert!(d >= -1e-12);
            prop_assert!(v >= ys[0] - 1e-12 && v <= ys[n - 1] + 1e-12);
            let v2 = f.eval((t + 0.01).min(1.0));
            prop_assert!(v2 >= v - 1e-12);
        }
    }
}

/// PCHIP value and derivative at `t` for the table `(x, y)` without building
/// the full slope vector. Clamps outside the table.
pub fn pchip_eval(x: &[f64], y: &[f64], t: f64) -> (f64, f64) {
    pchip_eval_by(x, |j| y[j], t)
}

/// As [`pchip_eval`] with the ordinates supplied lazily; only the (at most
/// four) samples around `t` are requested.
pub fn pchip_eval_by<F: Fn(usize) -> f64>(x: &[f64], y: F, t: f64) -> (f64, f64) {
    let n = x.len();
    debug_assert!(n >= 2);
    if t <= x[0] {
        return (y(0), 0.0);
    }
    if t >= x[n - 1] {
        return (y(n - 1), 0.0);
    }
    let i = x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
    let lo = i.saturating_sub(1);
    let hi = (i + 2).min(n - 1);
    let mut ys = [0.0; 4];
    for (k, j) in (lo..=hi).enumerate() {
        ys[k] = y(j);
    }
    let yv = |j: usize| ys[j - lo];
    let secant = |j: usize| (yv(j + 1) - yv(j)) / (x[j + 1] - x[j]);
    let slope_at = |k: usize| -> f64 {
        if n == 2 {
            return secant(0);
        }
        if k == 0 {
            return end_slope(x[1] - x[0], x[2] - x[1], secant(0), secant(1));
        }
        if k == n - 1 {
            return end_slope(x[n - 1] - x[n - 2], x[n - 2] - x[n - 3], secant(n - 2), secant(n - 3));
        }
        let (d0, d1) = (secant(k - 1), secant(k));
        if d0 * d1 <= 0.0 {
            return 0.0;
        }
        let (h0, h1) = (x[k] - x[k - 1], x[k + 1] - x[k]);
        let w1 = 2.0 * h1 + h0;
        let w2 = h1 + 2.0 * h0;
        (w1 + w2) / (w1 / d0 + w2 / d1)
    };
    hermite(x[i], x[i + 1], yv(i), yv(i + 1), slope_at(i), slope_at(i + 1), t)
}
