//! Cubic splines through ordered thread points.
//!
//! Each coordinate is fitted independently against normalized cumulative chord
//! length. With zero smoothing the result is the natural interpolating cubic;
//! otherwise it minimizes `sum (y_i - f(t_i))^2 + smoothing * integral f''^2`
//! (Reinsch form). Both reduce to one pentadiagonal system in the interior
//! second derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Polyline, Vec2};

pub const MIN_SPLINE_POINTS: usize = 4;

/// Piecewise cubic `p(t) = a + b u + c u^2 + d u^3`, `u = t - knots[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadSpline {
    pub knots: Vec<f64>,
    pub cx: Vec<[f64; 4]>,
    pub cy: Vec<[f64; 4]>,
    pub n_points: usize,
}

fn eval_poly(c: &[f64; 4], u: f64) -> f64 {
    c[0] + u * (c[1] + u * (c[2] + u * c[3]))
}

fn eval_poly_d1(c: &[f64; 4], u: f64) -> f64 {
    c[1] + u * (2.0 * c[2] + 3.0 * u * c[3])
}

fn eval_poly_d2(c: &[f64; 4], u: f64) -> f64 {
    2.0 * c[2] + 6.0 * u * c[3]
}

impl ThreadSpline {
    fn interval(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(0.0, 1.0);
        let last = self.knots.len() - 2;
        let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1).min(last);
        (i, t - self.knots[i])
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        let (i, u) = self.interval(t);
        Vec2::new(eval_poly(&self.cx[i], u), eval_poly(&self.cy[i], u))
    }

    pub fn derivative(&self, t: f64) -> Vec2 {
        let (i, u) = self.interval(t);
        Vec2::new(eval_poly_d1(&self.cx[i], u), eval_poly_d1(&self.cy[i], u))
    }

    pub fn second_derivative(&self, t: f64) -> Vec2 {
        let (i, u) = self.interval(t);
        Vec2::new(eval_poly_d2(&self.cx[i], u), eval_poly_d2(&self.cy[i], u))
    }

    /// `integral |p''(t)|^2 dt` over the domain, summed over both coordinates.
    pub fn roughness(&self) -> f64 {
        let per_axis = |coeffs: &[[f64; 4]]| -> f64 {
            coeffs
                .iter()
                .zip(self.knots.windows(2))
                .map(|(c, k)| {
                    let h = k[1] - k[0];
                    // (2c + 6d u)^2 integrated over [0, h]
                    let (p, q) = (2.0 * c[2], 6.0 * c[3]);
                    p * p * h + p * q * h * h + q * q * h * h * h / 3.0
                })
                .sum()
        };
        per_axis(&self.cx) + per_axis(&self.cy)
    }

    /// `n` points at uniform parameter spacing over `[0, 1]`.
    pub fn sample(&self, n: usize) -> Result<Polyline> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("sample count must be at least 2, got {n}")));
        }
        let last = (n - 1) as f64;
        Ok(Polyline::new((0..n).map(|k| self.eval(k as f64 / last)).collect()))
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("spline serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let s: ThreadSpline = serde_json::from_slice(bytes)?;
        let intervals = s.knots.len().saturating_sub(1);
        if s.knots.len() < 2 || s.cx.len() != intervals || s.cy.len() != intervals {
            return Err(Error::Format(format!(
                "spline has {} knots but {} x and {} y intervals",
                s.knots.len(),
                s.cx.len(),
                s.cy.len()
            )));
        }
        if s.knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("spline knots must be strictly increasing".into()));
        }
        Ok(s)
    }
}

/// Normalized cumulative chord length.
pub fn chord_parameters(points: &[Vec2]) -> Result<Vec<f64>> {
    let mut t = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    t.push(0.0);
    for (i, w) in points.windows(2).enumerate() {
        let d = w[0].distance(w[1]);
        if !(d > 0.0) {
            return Err(Error::CoincidentPoints { index: i + 1 });
        }
        acc += d;
        t.push(acc);
    }
    let last = *t.last().unwrap_or(&0.0);
    for v in &mut t {
        *v /= last;
    }
    if let Some(l) = t.last_mut() {
        *l = 1.0;
    }
    // Normalization can merge parameters of nearly coincident points.
    if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::CoincidentPoints { index: i + 1 });
    }
    Ok(t)
}

/// Symmetric positive-definite pentadiagonal system `A x = b`, where `d0`,
/// `d1`, `d2` are the main, first and second diagonals. LDL^T factorization.
fn solve_pentadiagonal(d0: &[f64], d1: &[f64], d2: &[f64], b: &[f64]) -> Vec<f64> {
    let m = d0.len();
    let mut d = vec![0.0; m];
    let mut l1 = vec![0.0; m]; // L[i][i-1]
    let mut l2 = vec![0.0; m]; // L[i][i-2]
    for i in 0..m {
        if i >= 2 {
            l2[i] = d2[i - 2] / d[i - 2];
        }
        if i >= 1 {
            let mut a = d1[i - 1];
            if i >= 2 {
                a -= l2[i] * d[i - 2] * l1[i - 1];
            }
            l1[i] = a / d[i - 1];
        }
        let mut di = d0[i];
        if i >= 1 {
            di -= l1[i] * l1[i] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i] * l2[i] * d[i - 2];
        }
        d[i] = di;
    }
    let mut z = b.to_vec();
    for i in 0..m {
        if i >= 1 {
            z[i] -= l1[i] * z[i - 1];
        }
        if i >= 2 {
            z[i] -= l2[i] * z[i - 2];
        }
    }
    for i in 0..m {
        z[i] /= d[i];
    }
    for i in (0..m).rev() {
        if i + 1 < m {
            z[i] -= l1[i + 1] * z[i + 1];
        }
        if i + 2 < m {
            z[i] -= l2[i + 2] * z[i + 2];
        }
    }
    z
}

/// Fit one coordinate; returns per-interval coefficients.
fn fit_axis(t: &[f64], y: &[f64], smoothing: f64) -> Vec<[f64; 4]> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let m = n - 2;
    // Column j (interior knot j + 1) of Q has entries at rows j, j+1, j+2.
    let q = |j: usize| -> [f64; 3] { [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]] };
    let mut d0: Vec<f64> = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
    let mut d1: Vec<f64> = (0..m.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();
    let mut d2: Vec<f64> = vec![0.0; m.saturating_sub(2)];
    if smoothing > 0.0 {
        for j in 0..m {
            let a = q(j);
            d0[j] += smoothing * (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
            if j + 1 < m {
                let b = q(j + 1);
                d1[j] += smoothing * (a[1] * b[0] + a[2] * b[1]);
            }
            if j + 2 < m {
                let c = q(j + 2);
                d2[j] += smoothing * (a[2] * c[0]);
            }
        }
    }
    let rhs: Vec<f64> = (0..m)
        .map(|j| (y[j + 2] - y[j + 1]) / h[j + 1] - (y[j + 1] - y[j]) / h[j])
        .collect();
    let gamma = solve_pentadiagonal(&d0, &d1, &d2, &rhs);
    let mut second = vec![0.0; n];
    second[1..n - 1].copy_from_slice(&gamma);
    let mut f = y.to_vec();
    if smoothing > 0.0 {
        for (j, &g) in gamma.iter().enumerate() {
            let a = q(j);
            for (k, qa) in a.iter().enumerate() {
                f[j + k] -= smoothing * qa * g;
            }
        }
    }
    (0..n - 1)
        .map(|i| {
            let hi = h[i];
            let (m0, m1) = (second[i], second[i + 1]);
            [
                f[i],
                (f[i + 1] - f[i]) / hi - hi * (2.0 * m0 + m1) / 6.0,
                m0 / 2.0,
                (m1 - m0) / (6.0 * hi),
            ]
        })
        .collect()
}

/// Fit a cubic spline per coordinate through `points`.
pub fn fit_spline(points: &[Vec2], smoothing: f64) -> Result<ThreadSpline> {
    if points.len() < MIN_SPLINE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "spline fitting needs at least {MIN_SPLINE_POINTS} points, got {}",
            points.len()
        )));
    }
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothing must be non-negative, got {smoothing}")));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("point {i} is not finite")));
    }
    let t = chord_parameters(points)?;
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    Ok(ThreadSpline {
        cx: fit_axis(&t, &xs, smoothing),
        cy: fit_axis(&t, &ys, smoothing),
        knots: t,
        n_points: points.len(),
    })
}
