//! Synthetic thread scenes with exact ground truth.
//!
//! A scene is a smooth open cubic B-spline driven by a bounded random walk of
//! control points. The curve is resampled densely by arclength; each sample
//! carries its normalized arclength `s`. Rendering stamps a flat profile of
//! width `w` around the centerline. Every thread pixel stores the remapped
//! parameter of the nearest centerline point of the pass that owns it.
//! Passes owned by occluded key points are drawn first, so visible passes win
//! at self-overlaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, segments_intersect_half_open, Vec2};
use crate::io::GroundTruthFile;
use crate::raster::{remap_param, BinaryMask, GradientMap, OverlapLabel, OverlapMap};

/// Centerline sample spacing in pixels.
pub const SAMPLE_SPACING: f64 = 0.25;

const MAX_ATTEMPTS: usize = 20_000;
/// Minimum separation, in thread parameter, between the two passes of a crossing.
const MIN_CROSSING_SEPARATION: f64 = 0.2;
/// Minimum crossing angle in degrees.
const MIN_CROSSING_ANGLE_DEG: f64 = 40.0;
/// Consecutive covering segments closer than this (in segment indices) belong to one pass.
const PASS_GAP_SEGMENTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Thread width `w` in pixels.
    pub thread_width: f64,
    pub n_control_points: usize,
    pub min_self_intersections: usize,
    pub max_self_intersections: usize,
    /// Number of rectangular occluders placed over the thread.
    pub occlusion_rects: usize,
    /// Side length of each occluder in pixels.
    pub occluder_size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            thread_width: 4.0,
            n_control_points: 8,
            min_self_intersections: 0,
            max_self_intersections: 2,
            occlusion_rects: 0,
            occluder_size: 40,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.width < 32 || self.height < 32 {
            return bad(format!("scene must be at least 32x32, got {}x{}", self.width, self.height));
        }
        if !(self.thread_width >= 1.0) {
            return bad(format!("thread width must be >= 1, got {}", self.thread_width));
        }
        if self.n_control_points < 4 {
            return bad(format!("need at least 4 control points, got {}", self.n_control_points));
        }
        if self.min_self_intersections > self.max_self_intersections {
            return bad(format!(
                "min self-intersections {} exceeds max {}",
                self.min_self_intersections, self.max_self_intersections
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    fn margin(&self) -> f64 {
        (4.0 * self.thread_width).max(12.0)
    }

    fn clearance(&self) -> f64 {
        3.0 * self.thread_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlineSample {
    pub pos: Vec2,
    pub s: f64,
}

/// Geometric ground truth of a scene: the part persisted as JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreadCurve {
    pub width: usize,
    pub height: usize,
    pub control_points: Vec<Vec2>,
    /// One flag per control point; see [`ThreadCurve::owner`].
    pub occluded: Vec<bool>,
    pub centerline: Vec<CenterlineSample>,
}

impl ThreadCurve {
    /// Index of the control point that owns thread parameter `s`.
    ///
    /// Key point `k` owns the parameter interval nearest to `k / (n - 1)`.
    pub fn owner(&self, s: f64) -> usize {
        let n = self.control_points.len();
        if n <= 1 {
            return 0;
        }
        ((s * (n - 1) as f64).round() as usize).min(n - 1)
    }

    pub fn is_occluded_at(&self, s: f64) -> bool {
        self.occluded.get(self.owner(s)).copied().unwrap_or(false)
    }

    pub fn length(&self) -> f64 {
        self.centerline
            .windows(2)
            .map(|w| w[0].pos.distance(w[1].pos))
            .sum()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.centerline.iter().map(|c| c.pos).collect()
    }

    /// Same curve traversed from the other end, `s -> 1 - s`.
    pub fn reversed(&self) -> ThreadCurve {
        ThreadCurve {
            width: self.width,
            height: self.height,
            control_points: self.control_points.iter().rev().copied().collect(),
            occluded: self.occluded.iter().rev().copied().collect(),
            centerline: self
                .centerline
                .iter()
                .rev()
                .map(|c| CenterlineSample { pos: c.pos, s: 1.0 - c.s })
                .collect(),
        }
    }

    pub fn to_file(&self) -> GroundTruthFile {
        GroundTruthFile {
            width: self.width,
            height: self.height,
            control_points: self.control_points.iter().map(|&p| p.into()).collect(),
            occluded: self.occluded.clone(),
            centerline: self.centerline.iter().map(|c| [c.pos.x, c.pos.y, c.s]).collect(),
        }
    }

    pub fn from_file(file: &GroundTruthFile) -> Result<Self> {
        file.validate()?;
        Ok(ThreadCurve {
            width: file.width,
            height: file.height,
            control_points: file.control_points.iter().map(|&p| p.into()).collect(),
            occluded: file.occluded.clone(),
            centerline: file
                .centerline
                .iter()
                .map(|c| CenterlineSample { pos: Vec2::new(c[0], c[1]), s: c[2] })
                .collect(),
        })
    }
}

/// A generated scene with its noise-free renders.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGroundTruth {
    pub curve: ThreadCurve,
    pub gradient: GradientMap,
    pub conjugate: GradientMap,
    pub overlap: OverlapMap,
    pub mask: BinaryMask,
    /// Thread-parameter pairs `(s_a, s_b)` of each self-intersection, `s_a < s_b`.
    pub crossings: Vec<(f64, f64)>,
}

/// Axis-aligned pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
}

impl Rect {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x as f64 - 0.5
            && p.x < (self.x + self.width) as f64 - 0.5
            && p.y >= self.y as f64 - 0.5
            && p.y < (self.y + self.height) as f64 - 0.5
    }

    /// Distance from `p` to the closed pixel footprint of the rectangle.
    pub fn distance(&self, p: Vec2) -> f64 {
        let x0 = self.x as f64 - 0.5;
        let y0 = self.y as f64 - 0.5;
        let x1 = (self.x + self.width) as f64 - 0.5;
        let y1 = (self.y + self.height) as f64 - 0.5;
        let dx = (x0 - p.x).max(0.0).max(p.x - x1);
        let dy = (y0 - p.y).max(0.0).max(p.y - y1);
        dx.hypot(dy)
    }
}

/// Deterministic generator stream derived from a base seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_OCCLUDERS: u64 = 1 << 40;
const STREAM_NOISE: u64 = 1 << 41;

pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneGroundTruth> {
    cfg.validate()?;
    let mut achieved = std::collections::BTreeSet::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_stream(cfg.seed, attempt as u64);
        let Some(control) = random_walk(cfg, &mut rng) else {
            continue;
        };
        let centerline = sample_clamped_bspline(&control, SAMPLE_SPACING);
        if !curve_is_admissible(cfg, &centerline) {
            continue;
        }
        let positions: Vec<Vec2> = centerline.iter().map(|c| c.pos).collect();
        let crossings = find_self_intersections(&positions);
        achieved.insert(crossings.len());
        if crossings.len() < cfg.min_self_intersections || crossings.len() > cfg.max_self_intersections {
            continue;
        }
        if !crossings_are_resolvable(cfg, &centerline, &crossings) {
            continue;
        }
        let mut occluded = vec![false; control.len()];
        let crossing_params: Vec<(f64, f64)> = crossings
            .iter()
            .map(|&(i, j)| (centerline[i].s, centerline[j].s))
            .collect();
        let mut curve = ThreadCurve {
            width: cfg.width,
            height: cfg.height,
            control_points: control,
            occluded: Vec::new(),
            centerline,
        };
        for &(sa, sb) in &crossing_params {
            let under = if rng.random_bool(0.5) { sa } else { sb };
            occluded[curve.owner(under)] = true;
        }
        curve.occluded = occluded;
        return Ok(render_scene(curve, cfg.thread_width, crossing_params));
    }
    Err(Error::Generation {
        attempts: MAX_ATTEMPTS,
        min: cfg.min_self_intersections,
        max: cfg.max_self_intersections,
        achieved: achieved.into_iter().collect(),
    })
}

/// Render all maps for a curve.
pub fn render_scene(curve: ThreadCurve, w: f64, crossings: Vec<(f64, f64)>) -> SceneGroundTruth {
    let gradient = render_gradient_map(&curve, w);
    let conjugate = conjugate_ground_truth(&curve, w);
    let overlap = render_overlap_map(&curve, w);
    let mask = gradient.support();
    SceneGroundTruth {
        curve,
        gradient,
        conjugate,
        overlap,
        mask,
        crossings,
    }
}

fn random_walk(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Option<Vec<Vec2>> {
    let margin = cfg.margin();
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let n = cfg.n_control_points;
    // Aim for a thread roughly 1.4x the short side of the frame.
    let step = 1.4 * w.min(h) / (n - 1) as f64 * rng.random_range(0.8..1.2);
    let max_turn = 1.4_f64.min(step / (3.0 * cfg.thread_width));
    let lo = Vec2::new(margin, margin);
    let hi = Vec2::new(w - margin, h - margin);
    let mut p = Vec2::new(
        rng.random_range(lo.x + 0.2 * (hi.x - lo.x)..hi.x - 0.2 * (hi.x - lo.x)),
        rng.random_range(lo.y + 0.2 * (hi.y - lo.y)..hi.y - 0.2 * (hi.y - lo.y)),
    );
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    // A persistent turning bias produces loops (and hence crossings) some of the time.
    let bias = rng.random_range(-0.7..0.7);
    let mut points = vec![p];
    for _ in 1..n {
        let mut placed = false;
        for _ in 0..16 {
            let turn = (bias + rng.random_range(-max_turn..max_turn)).clamp(-max_turn, max_turn);
            let candidate = p + Vec2::from_angle(heading + turn) * step;
            if candidate.x >= lo.x && candidate.x <= hi.x && candidate.y >= lo.y && candidate.y <= hi.y {
                heading += turn;
                p = candidate;
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
        points.push(p);
    }
    Some(points)
}

fn de_boor(control: &[Vec2], knots: &[f64], u: f64) -> Vec2 {
    let degree = 3;
    let n = control.len();
    // Span index k with knots[k] <= u < knots[k + 1], clamped to the last span.
    let mut k = degree;
    while k < n - 1 && u >= knots[k + 1] {
        k += 1;
    }
    let mut d: Vec<Vec2> = (0..=degree).map(|j| control[j + k - degree]).collect();
    for r in 1..=degree {
        for j in (r..=degree).rev() {
            let i = j + k - degree;
            let denom = knots[i + degree + 1 - r] - knots[i];
            let alpha = if denom > 0.0 { (u - knots[i]) / denom } else { 0.0 };
            d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
        }
    }
    d[degree]
}

/// Evaluate the clamped uniform cubic B-spline of `control` and resample it at
/// uniform arclength `spacing`, attaching normalized arclength.
pub fn sample_clamped_bspline(control: &[Vec2], spacing: f64) -> Vec<CenterlineSample> {
    let n = control.len();
    assert!(n >= 4, "cubic B-spline needs 4 control points");
    let spans = n - 3;
    let mut knots = vec![0.0; 4];
    knots.extend((1..spans).map(|i| i as f64 / spans as f64));
    knots.extend([1.0; 4]);

    let polygon: f64 = control.windows(2).map(|w| w[0].distance(w[1])).sum();
    let fine_steps = ((polygon / 0.05).ceil() as usize).max(16);
    let fine: Vec<Vec2> = (0..=fine_steps)
        .map(|i| de_boor(control, &knots, i as f64 / fine_steps as f64))
        .collect();
    resample_by_arclength(&fine, spacing)
}

/// Resample a polyline at uniform arclength spacing; the last sample lands on
/// the final vertex.
pub fn resample_by_arclength(points: &[Vec2], spacing: f64) -> Vec<CenterlineSample> {
    let mut cumulative = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in points.windows(2) {
        acc += w[0].distance(w[1]);
        cumulative.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return Vec::new();
    }
    let count = (total / spacing).ceil() as usize;
    let step = total / count as f64;
    let mut out = Vec::with_capacity(count + 1);
    let mut seg = 0;
    for i in 0..=count {
        let target = if i == count { total } else { i as f64 * step };
        while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 { (target - cumulative[seg]) / len } else { 0.0 };
        out.push(CenterlineSample {
            pos: points[seg].lerp(points[seg + 1], t.clamp(0.0, 1.0)),
            s: i as f64 / count as f64,
        });
    }
    out
}

fn curve_is_admissible(cfg: &SceneConfig, centerline: &[CenterlineSample]) -> bool {
    let margin = cfg.margin();
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let inside = centerline.iter().all(|c| {
        c.pos.x >= margin && c.pos.x <= w - 1.0 - margin && c.pos.y >= margin && c.pos.y <= h - 1.0 - margin
    });
    if !inside {
        return false;
    }
    // Radius of curvature from three samples 2 px apart.
    let k = 8;
    let min_radius = 3.0 * cfg.thread_width;
    for i in k..centerline.len().saturating_sub(k) {
        let a = centerline[i - k].pos;
        let b = centerline[i].pos;
        let c = centerline[i + k].pos;
        let twice_area = (b - a).cross(c - a).abs();
        if twice_area == 0.0 {
            continue;
        }
        let radius = a.distance(b) * b.distance(c) * c.distance(a) / (2.0 * twice_area);
        if radius < min_radius {
            return false;
        }
    }
    true
}

/// Self-intersections of a polyline as pairs of segment indices `(i, j)`,
/// `i + 1 < j`, sorted.
///
/// Segments are half-open so a crossing through a shared vertex counts once.
/// Adjacent segments are never compared.
pub fn find_self_intersections(points: &[Vec2]) -> Vec<(usize, usize)> {
    if points.len() < 4 {
        return Vec::new();
    }
    const CELL: f64 = 4.0;
    let cell_of = |p: Vec2| ((p.x / CELL).floor() as i64, (p.y / CELL).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for i in 0..points.len() - 1 {
        let (ax, ay) = cell_of(points[i]);
        let (bx, by) = cell_of(points[i + 1]);
        for cx in ax.min(bx)..=ax.max(bx) {
            for cy in ay.min(by)..=ay.max(by) {
                grid.entry((cx, cy)).or_default().push(i);
            }
        }
    }
    let mut pairs = Vec::new();
    for bucket in grid.values() {
        for (a, &i) in bucket.iter().enumerate() {
            for &j in &bucket[a + 1..] {
                let (i, j) = if i < j { (i, j) } else { (j, i) };
                if j <= i + 1 {
                    continue;
                }
                if segments_intersect_half_open(points[i], points[i + 1], points[j], points[j + 1]) {
                    pairs.push((i, j));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn crossings_are_resolvable(
    cfg: &SceneConfig,
    centerline: &[CenterlineSample],
    crossings: &[(usize, usize)],
) -> bool {
    let total = centerline.len() - 1;
    let length = total as f64 * SAMPLE_SPACING;
    let clearance = cfg.clearance();
    let min_sin = MIN_CROSSING_ANGLE_DEG.to_radians().sin();
    let end_guard = 4.0 * clearance / length;
    for &(i, j) in crossings {
        let (si, sj) = (centerline[i].s, centerline[j].s);
        if sj - si < MIN_CROSSING_SEPARATION {
            return false;
        }
        if si < end_guard || sj > 1.0 - end_guard {
            return false;
        }
        let di = centerline[i + 1].pos - centerline[i].pos;
        let dj = centerline[j + 1].pos - centerline[j].pos;
        if (di.cross(dj) / (di.norm() * dj.norm())).abs() < min_sin {
            return false;
        }
    }
    // Strands that come close must do so only near a crossing.
    let stride = 8;
    let coarse: Vec<(usize, Vec2)> = centerline
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, c)| (i, c.pos))
        .collect();
    let arc = |i: usize| i as f64 * SAMPLE_SPACING;
    let near_crossing = |a: usize, b: usize| {
        crossings.iter().any(|&(ci, cj)| {
            let r = 2.5 * clearance;
            ((arc(a) - arc(ci)).abs() < r && (arc(b) - arc(cj)).abs() < r)
                || ((arc(a) - arc(cj)).abs() < r && (arc(b) - arc(ci)).abs() < r)
        })
    };
    for (ka, &(ia, pa)) in coarse.iter().enumerate() {
        for &(ib, pb) in &coarse[ka + 1..] {
            if arc(ib) - arc(ia) <= std::f64::consts::PI * clearance {
                continue;
            }
            if pa.distance(pb) < clearance && !near_crossing(ia, ib) {
                return false;
            }
        }
    }
    true
}

/// Per-pixel pass tracking shared by the renderers.
struct PassRaster {
    width: usize,
    height: usize,
    last_seg: Vec<usize>,
    best_dist: Vec<f64>,
    best_s: Vec<f64>,
    passes: Vec<u32>,
}

impl PassRaster {
    fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            last_seg: vec![usize::MAX; n],
            best_dist: vec![f64::INFINITY; n],
            best_s: vec![0.0; n],
            passes: vec![0; n],
        }
    }

    /// Stamp segment `seg` of `curve`; `continues(prev, seg)` decides whether a
    /// pixel last touched by `prev` is still in the same pass.
    fn stamp(
        &mut self,
        curve: &ThreadCurve,
        seg: usize,
        radius: f64,
        continues: impl Fn(usize, usize) -> bool,
    ) {
        let a = curve.centerline[seg];
        let b = curve.centerline[seg + 1];
        let x0 = (a.pos.x.min(b.pos.x) - radius).floor().max(0.0) as usize;
        let y0 = (a.pos.y.min(b.pos.y) - radius).floor().max(0.0) as usize;
        let x1 = ((a.pos.x.max(b.pos.x) + radius).ceil() as usize).min(self.width - 1);
        let y1 = ((a.pos.y.max(b.pos.y) + radius).ceil() as usize).min(self.height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (d, t) = point_segment_distance(Vec2::new(x as f64, y as f64), a.pos, b.pos);
                if d >= radius {
                    continue;
                }
                let idx = y * self.width + x;
                let s = a.s + t * (b.s - a.s);
                let prev = self.last_seg[idx];
                if prev != usize::MAX && continues(prev, seg) {
                    if d < self.best_dist[idx] {
                        self.best_dist[idx] = d;
                        self.best_s[idx] = s;
                    }
                } else {
                    self.passes[idx] += 1;
                    self.best_dist[idx] = d;
                    self.best_s[idx] = s;
                }
                self.last_seg[idx] = seg;
            }
        }
    }
}

fn render_param_map(curve: &ThreadCurve, w: f64, conjugate: bool) -> GradientMap {
    let mut raster = PassRaster::new(curve.width, curve.height);
    let n_seg = curve.centerline.len().saturating_sub(1);
    let occluded: Vec<bool> = (0..n_seg)
        .map(|i| curve.is_occluded_at(curve.centerline[i].s))
        .collect();
    let radius = w / 2.0;
    let same_group_run = |prev: usize, seg: usize| {
        prev < seg
            && seg - prev <= PASS_GAP_SEGMENTS
            && (prev..=seg).all(|k| occluded[k] == occluded[seg])
    };
    for phase in [true, false] {
        for seg in (0..n_seg).filter(|&i| occluded[i] == phase) {
            raster.stamp(curve, seg, radius, same_group_run);
        }
    }
    let values = raster
        .passes
        .iter()
        .zip(&raster.best_s)
        .map(|(&p, &s)| {
            if p == 0 {
                0.0
            } else if conjugate {
                remap_param(1.0 - s)
            } else {
                remap_param(s)
            }
        })
        .collect();
    GradientMap::new(curve.width, curve.height, values).expect("rendered values lie in [0, 1]")
}

/// Gradient map of `curve` with a flat cross-section of width `w`.
pub fn render_gradient_map(curve: &ThreadCurve, w: f64) -> GradientMap {
    render_param_map(curve, w, false)
}

/// The same rendering with `s` replaced by `1 - s` and the same occlusion order.
pub fn conjugate_ground_truth(curve: &ThreadCurve, w: f64) -> GradientMap {
    render_param_map(curve, w, true)
}

/// Per-pixel count of distinct thread passes covering the pixel center.
pub fn coverage_counts(curve: &ThreadCurve, w: f64) -> Vec<u32> {
    let mut raster = PassRaster::new(curve.width, curve.height);
    let n_seg = curve.centerline.len().saturating_sub(1);
    for seg in 0..n_seg {
        raster.stamp(curve, seg, w / 2.0, |prev, seg| {
            prev < seg && seg - prev <= PASS_GAP_SEGMENTS
        });
    }
    raster.passes
}

pub fn render_overlap_map(curve: &ThreadCurve, w: f64) -> OverlapMap {
    let labels = coverage_counts(curve, w)
        .into_iter()
        .map(|c| match c {
            0 => OverlapLabel::Background,
            1 => OverlapLabel::NonOverlap,
            _ => OverlapLabel::Overlap,
        })
        .collect();
    OverlapMap::new(curve.width, curve.height, labels).expect("dimensions match")
}

/// Additive Gaussian noise (clamped to `[0, 1]`) followed by zeroing every
/// occlusion rectangle.
pub fn apply_degradation(map: &GradientMap, noise_sigma: f64, rects: &[Rect], seed: u64) -> Result<GradientMap> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut field = map.field().clone();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        let mut rng = rng_stream(seed, STREAM_NOISE);
        for v in field.data_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let (w, h) = (field.width() as i64, field.height() as i64);
    for r in rects {
        for y in r.y.max(0)..(r.y + r.height).min(h) {
            for x in r.x.max(0)..(r.x + r.width).min(w) {
                field.set(x as usize, y as usize, 0.0);
            }
        }
    }
    GradientMap::from_field(field)
}

/// Overwrite a random `fraction` of pixels with uniform values in `(0, 1]`.
pub fn apply_salt_noise(map: &GradientMap, fraction: f64, seed: u64) -> GradientMap {
    let mut field = map.field().clone();
    let mut rng = rng_stream(seed, STREAM_NOISE + 1);
    for v in field.data_mut() {
        if rng.random_bool(fraction.clamp(0.0, 1.0)) {
            *v = 1.0 - rng.random::<f64>();
        }
    }
    GradientMap::from_field_clamped(field)
}

/// Place `count` square occluders of side `size` over the thread so that no
/// occluder comes within `size / 2` of either thread endpoint.
pub fn place_occluders(curve: &ThreadCurve, count: usize, size: usize, seed: u64) -> Vec<Rect> {
    let mut rng = rng_stream(seed, STREAM_OCCLUDERS);
    let first = curve.centerline.first().map(|c| c.pos);
    let last = curve.centerline.last().map(|c| c.pos);
    let (Some(first), Some(last)) = (first, last) else {
        return Vec::new();
    };
    let size_i = size as i64;
    let mut rects = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..256 {
            let s = rng.random_range(0.15..0.85);
            let idx = ((s * (curve.centerline.len() - 1) as f64) as usize).min(curve.centerline.len() - 1);
            let center = curve.centerline[idx].pos;
            let rect = Rect {
                x: center.x.round() as i64 - size_i / 2,
                y: center.y.round() as i64 - size_i / 2,
                width: size_i,
                height: size_i,
            };
            let guard = size as f64 / 2.0;
            if rect.distance(first) > guard && rect.distance(last) > guard {
                rects.push(rect);
                break;
            }
        }
    }
    rects
}

/// Input maps for a scene as produced by `gen`: occluders and noise applied
/// identically (rectangles) or independently (noise) to both maps.
pub fn degraded_inputs(gt: &SceneGroundTruth, cfg: &SceneConfig) -> Result<(GradientMap, GradientMap, Vec<Rect>)> {
    let rects = place_occluders(&gt.curve, cfg.occlusion_rects, cfg.occluder_size, cfg.seed);
    let g = apply_degradation(&gt.gradient, cfg.noise_sigma, &rects, cfg.seed)?;
    let c = apply_degradation(&gt.conjugate, cfg.noise_sigma, &rects, cfg.seed ^ 0x5bd1_e995)?;
    Ok((g, c, rects))
}
