//! Sub-pixel centerline extraction for bright curvilinear structures.
//!
//! Each pixel's Hessian of the Gaussian-smoothed image is eigen-decomposed.
//! The eigenvector `n` of the eigenvalue with the largest magnitude is the
//! line normal; a second-order Taylor expansion along `n` gives the sub-pixel
//! extremum, which is kept only when it falls (nearly) inside the pixel. Of two
//! candidates that land on the same spot only the stronger is kept; the rest
//! are filtered by hysteresis on the normalized ridge response.
//!
//! Derivative kernels are pixel-integrated Gaussians truncated at 3.5 sigma,
//! so a piecewise-constant bar is smoothed exactly. Responses are divided by
//! the response of a unit-height bar of the configured line width, which puts
//! the thresholds in contrast units: a bar of height `h` responds with roughly
//! `h` (slightly less once the bar is rasterized).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::raster::ScalarField;

const KERNEL_TRUNCATION: f64 = 3.5;
/// Largest accepted sub-pixel offset per axis. Slightly beyond 0.5 so a ridge
/// centered exactly between two pixels, where the Taylor step overshoots, is
/// still claimed by a pixel.
pub const PIXEL_BOUNDARY: f64 = 0.6;
/// Candidates from neighboring pixels closer than this are one point; the
/// weaker is dropped. Happens for ridges lying between two pixel rows.
pub const DUPLICATE_RADIUS: f64 = 0.5;
// Slack for points that land exactly on the image boundary.
const EPS: f64 = 1e-9;

/// Gaussian scale matched to a line of width `w`: `w / (2 sqrt 3) + 0.5`.
pub fn sigma_from_width(w: f64) -> Result<f64> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::InvalidArgument(format!("line width must be positive, got {w}")));
    }
    Ok(w / (2.0 * 3f64.sqrt()) + 0.5)
}

/// Second-derivative magnitude at the center of a unit-height bar of width `w`
/// smoothed with a Gaussian of scale `sigma`.
pub fn unit_bar_response(w: f64, sigma: f64) -> f64 {
    w / (sigma.powi(3) * (2.0 * std::f64::consts::PI).sqrt()) * (-(w * w) / (8.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StegerParams {
    pub sigma: f64,
    /// Lower hysteresis threshold (contrast units).
    pub t_l: f64,
    /// Upper hysteresis threshold (contrast units).
    pub t_u: f64,
    /// Line width used to normalize responses.
    pub line_width: f64,
}

impl StegerParams {
    pub fn for_width(line_width: f64, t_l: f64, t_u: f64) -> Result<Self> {
        let p = Self {
            sigma: sigma_from_width(line_width)?,
            t_l,
            t_u,
            line_width,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.line_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "line width must be positive, got {}",
                self.line_width
            )));
        }
        if !(0.0 <= self.t_l && self.t_l <= self.t_u) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must satisfy 0 <= t_l <= t_u, got t_l={} t_u={}",
                self.t_l, self.t_u
            )));
        }
        Ok(())
    }

    fn response_scale(&self) -> f64 {
        1.0 / unit_bar_response(self.line_width, self.sigma)
    }
}

/// A sub-pixel centerline point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinePoint {
    pub pos: Vec2,
    /// Unit line direction. Sign is arbitrary; normalized to `y >= 0` (then `x >= 0`).
    pub tangent: Vec2,
    /// Normalized second-derivative magnitude across the line.
    pub response: f64,
    /// Field value sampled at `pos`.
    pub intensity: f64,
    /// Source pixel `(x, y)`.
    pub pixel: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePointSet {
    pub points: Vec<LinePoint>,
    pub width: usize,
    pub height: usize,
}

impl LinePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The 1-D kernels for derivative orders 0, 1 and 2, indexed `-radius..=radius`.
#[derive(Debug, Clone)]
pub struct GaussianKernels {
    pub radius: usize,
    pub k0: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
}

impl GaussianKernels {
    pub fn new(sigma: f64) -> Self {
        let radius = (KERNEL_TRUNCATION * sigma).ceil() as usize;
        let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / (sigma * std::f64::consts::SQRT_2)));
        let g = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let dg = |x: f64| -x / (sigma * sigma) * g(x);
        let taps = -(radius as i64)..=radius as i64;
        let mut k0: Vec<f64> = taps.clone().map(|i| phi(i as f64 + 0.5) - phi(i as f64 - 0.5)).collect();
        let k1: Vec<f64> = taps.clone().map(|i| g(i as f64 + 0.5) - g(i as f64 - 0.5)).collect();
        let mut k2: Vec<f64> = taps.map(|i| dg(i as f64 + 0.5) - dg(i as f64 - 0.5)).collect();
        let s0: f64 = k0.iter().sum();
        k0.iter_mut().for_each(|v| *v /= s0);
        let s2: f64 = k2.iter().sum();
        k2[radius] -= s2;
        Self { radius, k0, k1, k2 }
    }
}

fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as i64 {
        m = period - m;
    }
    m as usize
}

/// Row passes with `k0`, `k1` and `k2` (reflect-101 borders). The kernels
/// are even, odd and even, so mirrored taps are folded.
fn convolve_rows(data: &[f64], width: usize, k: &GaussianKernels) -> [Vec<f64>; 3] {
    let r = k.radius;
    let mut out = [vec![0.0; data.len()], vec![0.0; data.len()], vec![0.0; data.len()]];
    let [o0, o1, o2] = &mut out;
    o0.par_chunks_mut(width)
        .zip(o1.par_chunks_mut(width))
        .zip(o2.par_chunks_mut(width))
        .zip(data.par_chunks(width))
        .for_each_init(Vec::new, |padded, (((d0, d1), d2), src)| {
            padded.clear();
            padded.extend((0..width + 2 * r).map(|i| src[reflect(i as i64 - r as i64, width)]));
            for x in 0..width {
                let c = x + r;
                let v = padded[c];
                let (mut a0, mut a1, mut a2) = (k.k0[r] * v, 0.0, k.k2[r] * v);
                for j in 1..=r {
                    // r(x) = sum_i f(x - i) k[i]
                    let (behind, ahead) = (padded[c - j], padded[c + j]);
                    a0 += k.k0[r + j] * (behind + ahead);
                    a1 += k.k1[r + j] * (behind - ahead);
                    a2 += k.k2[r + j] * (behind + ahead);
                }
                d0[x] = a0;
                d1[x] = a1;
                d2[x] = a2;
            }
        });
    out
}

/// Smoothed first and second partial derivatives.
pub struct Derivatives {
    pub rx: Vec<f64>,
    pub ry: Vec<f64>,
    pub rxx: Vec<f64>,
    pub rxy: Vec<f64>,
    pub ryy: Vec<f64>,
}

pub fn gaussian_derivatives(field: &ScalarField, sigma: f64) -> Derivatives {
    let k = GaussianKernels::new(sigma);
    let (w, h) = (field.width(), field.height());
    let [row0, row1, row2] = convolve_rows(field.data(), w, &k);
    let r = k.radius;
    let n = w * h;
    let mut d = Derivatives {
        rx: vec![0.0; n],
        ry: vec![0.0; n],
        rxx: vec![0.0; n],
        rxy: vec![0.0; n],
        ryy: vec![0.0; n],
    };
    fn row_of(buf: &[f64], y: i64, w: usize, h: usize) -> &[f64] {
        let sy = reflect(y, h);
        &buf[sy * w..(sy + 1) * w]
    }
    let line = |buf, y| row_of(buf, y, w, h);
    d.rx.par_chunks_mut(w)
        .zip(d.ry.par_chunks_mut(w))
        .zip(d.rxx.par_chunks_mut(w))
        .zip(d.rxy.par_chunks_mut(w))
        .zip(d.ryy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((((rx, ry), rxx), rxy), ryy))| {
            let y = y as i64;
            let (c0, c1, c2) = (line(&row0, y), line(&row1, y), line(&row2, y));
            for x in 0..w {
                rx[x] = k.k0[r] * c1[x];
                rxx[x] = k.k0[r] * c2[x];
                ryy[x] = k.k2[r] * c0[x];
            }
            for j in 1..=r {
                let (k0, k1, k2) = (k.k0[r + j], k.k1[r + j], k.k2[r + j]);
                let (b0, b1, b2) = (line(&row0, y - j as i64), line(&row1, y - j as i64), line(&row2, y - j as i64));
                let (a0, a1, a2) = (line(&row0, y + j as i64), line(&row1, y + j as i64), line(&row2, y + j as i64));
                for x in 0..w {
                    rx[x] += k0 * (b1[x] + a1[x]);
                    ry[x] += k1 * (b0[x] - a0[x]);
                    rxx[x] += k0 * (b2[x] + a2[x]);
                    rxy[x] += k1 * (b1[x] - a1[x]);
                    ryy[x] += k2 * (b0[x] + a0[x]);
                }
            }
        });
    d
}

/// Eigen-decomposition of a symmetric 2x2 matrix, returning
/// `(lambda_major, n_major)` for the eigenvalue of largest magnitude.
fn major_eigen(rxx: f64, rxy: f64, ryy: f64) -> (f64, Vec2) {
    let mean = 0.5 * (rxx + ryy);
    let half_diff = 0.5 * (rxx - ryy);
    let d = half_diff.hypot(rxy);
    let (l1, l2) = (mean + d, mean - d);
    let lambda = if l1.abs() >= l2.abs() { l1 } else { l2 };
    if rxy == 0.0 {
        let n = if (lambda - rxx).abs() <= (lambda - ryy).abs() {
            Vec2::new(1.0, 0.0)
        } else {
            Vec2::new(0.0, 1.0)
        };
        return (lambda, n);
    }
    let a = Vec2::new(lambda - ryy, rxy);
    let b = Vec2::new(rxy, lambda - rxx);
    let v = if a.norm_sq() >= b.norm_sq() { a } else { b };
    (lambda, v.normalized())
}

fn canonical_tangent(t: Vec2) -> Vec2 {
    if t.y < 0.0 || (t.y == 0.0 && t.x < 0.0) {
        -t
    } else {
        t
    }
}

struct Candidate {
    pos: Vec2,
    tangent: Vec2,
    response: f64,
    offset: f64,
}

/// Extract bright-line centerline points from `field`.
pub fn extract_line_points(field: &ScalarField, params: &StegerParams) -> Result<LinePointSet> {
    params.validate()?;
    if let Some((x, y)) = field.find_non_finite() {
        return Err(Error::NonFinite { x, y });
    }
    let (w, h) = (field.width(), field.height());
    let der = gaussian_derivatives(field, params.sigma);
    let scale = params.response_scale();
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);

    let candidates: Vec<(usize, Candidate)> = (0..w * h)
        .into_par_iter()
        .filter_map(|i| {
            let (lambda, n) = major_eigen(der.rxx[i], der.rxy[i], der.ryy[i]);
            // Below t_l a candidate can neither pass hysteresis nor suppress
            // a stronger neighbor.
            if !(lambda < 0.0) || -lambda * scale < params.t_l {
                return None;
            }
            let t = -(der.rx[i] * n.x + der.ry[i] * n.y) / lambda;
            let (px, py) = (t * n.x, t * n.y);
            if px.abs() > PIXEL_BOUNDARY || py.abs() > PIXEL_BOUNDARY {
                return None;
            }
            let pos = Vec2::new((i % w) as f64 + px, (i / w) as f64 + py);
            if pos.x < -EPS || pos.y < -EPS || pos.x > max_x + EPS || pos.y > max_y + EPS {
                return None;
            }
            let pos = Vec2::new(pos.x.clamp(0.0, max_x), pos.y.clamp(0.0, max_y));
            let c = Candidate {
                pos,
                tangent: canonical_tangent(n.perp()),
                response: -lambda * scale,
                offset: px.hypot(py),
            };
            Some((i, c))
        })
        .collect();
    const EMPTY: u32 = u32::MAX;
    let mut slot = vec![EMPTY; w * h];
    for (k, &(i, _)) in candidates.iter().enumerate() {
        slot[i] = k as u32;
    }
    let slot = &slot;
    let neighbors = move |i: usize| {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        (-1..=1i64).flat_map(move |dy| (-1..=1i64).map(move |dx| (x + dx, y + dy))).filter_map(move |(nx, ny)| {
            if (nx, ny) == (x, y) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                return None;
            }
            let k = slot[ny as usize * w + nx as usize];
            (k != EMPTY).then_some(k as usize)
        })
    };

    let kept: Vec<bool> = candidates
        .par_iter()
        .map(|&(i, ref c)| {
            !neighbors(i).any(|k| {
                let (j, ref o) = candidates[k];
                o.pos.distance(c.pos) < DUPLICATE_RADIUS
                    && o.response
                        .total_cmp(&c.response)
                        .then(c.offset.total_cmp(&o.offset))
                        .then(i.cmp(&j))
                        .is_gt()
            })
        })
        .collect();

    // Hysteresis: seeds above t_u, grown through 8-connected candidates above t_l.
    let mut accepted = vec![false; candidates.len()];
    let mut stack = Vec::new();
    for (k, (_, c)) in candidates.iter().enumerate() {
        if kept[k] && c.response >= params.t_u && !accepted[k] {
            accepted[k] = true;
            stack.push(k);
            while let Some(j) = stack.pop() {
                for m in neighbors(candidates[j].0) {
                    if kept[m] && !accepted[m] {
                        accepted[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
    }

    let points = candidates
        .into_iter()
        .zip(accepted)
        .filter(|&(_, a)| a)
        .map(|((i, c), _)| LinePoint {
            pos: c.pos,
            tangent: c.tangent,
            response: c.response,
            intensity: field.sample_bilinear(c.pos).clamp(0.0, 1.0),
            pixel: ((i % w) as u32, (i / w) as u32),
        })
        .collect();
    Ok(LinePointSet {
        points,
        width: w,
        height: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> StegerParams {
        StegerParams::for_width(4.0, 0.039, 0.196).unwrap()
    }

    fn gaussian_ridge(w: usize, h: usize, center_y: f64, peak: f64) -> ScalarField {
        ScalarField::from_fn(w, h, |_, y| {
            let d = y as f64 - center_y;
            peak * (-(d * d) / (2.0 * 1.5 * 1.5)).exp()
        })
        .unwrap()
    }

    #[test]
    fn sigma_matches_width_formula() {
        assert!((sigma_from_width(4.0).unwrap() - 1.654_700_538_379_251_5).abs() < 1e-12);
        assert!((sigma_from_width(2.0).unwrap() - 1.077_350_269_189_625_7).abs() < 1e-12);
        assert!((sigma_from_width(2.0 * 3f64.sqrt()).unwrap() - 1.5).abs() < 1e-12);
        assert!(sigma_from_width(0.0).is_err());
        assert!(sigma_from_width(-1.0).is_err());
    }

    #[test]
    fn kernels_have_expected_moments() {
        let k = GaussianKernels::new(1.6547);
        assert!((k.k0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k.k1.iter().sum::<f64>().abs() < 1e-12);
        assert!(k.k2.iter().sum::<f64>().abs() < 1e-12);
        // First moment of the derivative kernel: sum_i (-i) k1[i] ~= 1.
        let m1: f64 = k.k1.iter().enumerate().map(|(j, v)| -((j as f64) - k.radius as f64) * v).sum();
        assert!((m1 - 1.0).abs() < 2e-3, "{m1}");
    }

    #[test]
    fn all_zero_field_yields_nothing() {
        let f = ScalarField::filled(32, 32, 0.0).unwrap();
        assert!(extract_line_points(&f, &params()).unwrap().is_empty());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut f = ScalarField::filled(8, 8, 0.0).unwrap();
        f.set(3, 5, f64::NAN);
        assert!(matches!(extract_line_points(&f, &params()), Err(Error::NonFinite { x: 3, y: 5 })));
    }

    #[test]
    fn unit_bar_responds_with_unit_contrast() {
        // A 4-pixel bar over [28, 32]: edge rows are half covered.
        let f = ScalarField::from_fn(64, 64, |_, y| match y {
            29..=31 => 1.0,
            28 | 32 => 0.5,
            _ => 0.0,
        })
        .unwrap();
        let set = extract_line_points(&f, &params()).unwrap();
        assert_eq!(set.len(), 64);
        for p in &set.points {
            assert!((p.pos.y - 30.0).abs() < 1e-9);
            assert!((p.response - 1.0).abs() < 0.1, "{}", p.response);
        }
    }

    #[test]
    fn gaussian_ridge_is_located_on_its_axis() {
        let c = 20.3;
        let set = extract_line_points(&gaussian_ridge(48, 40, c, 1.0), &params()).unwrap();
        assert!(set.len() >= 40);
        for p in &set.points {
            assert!((p.pos.y - c).abs() < 0.1, "{:?}", p.pos);
            assert!(p.tangent.y.abs() < 1f64.to_radians().sin());
            assert!((p.tangent.norm() - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&p.intensity));
        }
    }

    #[test]
    fn faint_ridge_below_lower_threshold_is_empty() {
        // Continuous response of the sigma=1.5 Gaussian ridge at scale s:
        // peak * 1.5 / s_tot^3 with s_tot^2 = 1.5^2 + s^2, normalized by the unit bar.
        let p = params();
        let s_tot2 = 1.5f64.powi(2) + p.sigma.powi(2);
        let per_unit = 1.5 / s_tot2.powf(1.5) / unit_bar_response(4.0, p.sigma);
        let peak = 0.9 * p.t_l / per_unit;
        let set = extract_line_points(&gaussian_ridge(48, 40, 20.0, peak), &p).unwrap();
        assert!(set.is_empty(), "{} points", set.len());
        // Just above t_u it is detected.
        let peak = 1.1 * p.t_u / per_unit;
        assert!(!extract_line_points(&gaussian_ridge(48, 40, 20.0, peak), &p).unwrap().is_empty());
    }

    #[test]
    fn at_most_one_point_per_pixel_and_inside_pixel() {
        let f = ScalarField::from_fn(40, 40, |x, y| {
            let d = (x as f64 - 0.7 * y as f64 - 5.0) / (1.0f64 + 0.49).sqrt();
            (-(d * d) / 4.5).exp()
        })
        .unwrap();
        let set = extract_line_points(&f, &params()).unwrap();
        let mut pixels: Vec<_> = set.points.iter().map(|p| p.pixel).collect();
        let n = pixels.len();
        pixels.sort_unstable();
        pixels.dedup();
        assert_eq!(pixels.len(), n);
        for p in &set.points {
            assert!((p.pos.x - p.pixel.0 as f64).abs() <= PIXEL_BOUNDARY);
            assert!((p.pos.y - p.pixel.1 as f64).abs() <= PIXEL_BOUNDARY);
        }
    }

    #[test]
    fn ridge_between_two_rows_yields_one_point_per_column() {
        let f = gaussian_ridge(40, 30, 14.5, 1.0);
        let set = extract_line_points(&f, &params()).unwrap();
        let mut cols: Vec<u32> = set.points.iter().map(|p| p.pixel.0).collect();
        let n = cols.len();
        cols.dedup();
        assert_eq!(cols.len(), n);
        assert!(n >= 30);
        for p in &set.points {
            assert!((p.pos.y - 14.5).abs() < 0.05, "{:?}", p.pos);
            for q in &set.points {
                assert!(p == q || p.pos.distance(q.pos) >= DUPLICATE_RADIUS);
            }
        }
    }

    #[test]
    fn rotating_the_field_rotates_points() {
        let f = ScalarField::from_fn(50, 36, |x, y| {
            let d1 = (x as f64 * 0.6 + y as f64 * 0.8 - 30.0).abs();
            let d2 = ((x as f64 - 20.0).powi(2) + (y as f64 - 18.0).powi(2)).sqrt() - 12.0;
            (-(d1 * d1) / 4.0).exp().max(0.8 * (-(d2 * d2) / 3.0).exp())
        })
        .unwrap();
        let a = extract_line_points(&f, &params()).unwrap();
        let b = extract_line_points(&f.rotate90(), &params()).unwrap();
        let h = f.height() as f64;
        assert_eq!(a.len(), b.len());
        for p in &a.points {
            let expected = Vec2::new(h - 1.0 - p.pos.y, p.pos.x);
            let t = Vec2::new(-p.tangent.y, p.tangent.x);
            let q = b
                .points
                .iter()
                .min_by(|u, v| u.pos.distance(expected).total_cmp(&v.pos.distance(expected)))
                .unwrap();
            assert!(q.pos.distance(expected) < 0.05);
            assert!(t.dot(q.tangent).abs() > 1f64.to_radians().cos());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn raising_thresholds_never_adds_points(
            blobs in proptest::collection::vec((0.0f64..32.0, 0.0f64..32.0, 0.2f64..1.0, 0.0f64..std::f64::consts::PI), 1..5),
            t_l in 0.0f64..0.5, dl in 0.0f64..0.5, t_u in 0.0f64..0.6, du in 0.0f64..0.6,
        ) {
            let f = ScalarField::from_fn(32, 32, |x, y| {
                blobs.iter().map(|&(cx, cy, a, th)| {
                    let d = (x as f64 - cx) * th.sin() - (y as f64 - cy) * th.cos();
                    a * (-(d * d) / 3.0).exp()
                }).fold(0.0, f64::max)
            }).unwrap();
            let (t_u, t_l) = (t_u.max(t_l), t_l);
            let base = |t_l: f64, t_u: f64| {
                let p = StegerParams { t_l, t_u, ..params() };
                extract_line_points(&f, &p).unwrap().points.into_iter().map(|p| p.pixel).collect::<std::collections::BTreeSet<_>>()
            };
            let reference = base(t_l, t_u);
            let higher_lower = base((t_l + dl).min(t_u), t_u);
            let higher_upper = base(t_l, t_u + du);
            prop_assert!(higher_lower.is_subset(&reference));
            prop_assert!(higher_upper.is_subset(&reference));
        }
    }
}
