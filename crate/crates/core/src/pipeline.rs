//! End-to-end reconstruction of one frame.
//!
//! Ridges are extracted from a gray field that is nearly constant along the
//! thread: the clamped sum of the gradient map and its conjugate, or the
//! support of the gradient map when no conjugate is given. Ordering
//! intensities come from the (denoised) gradient map itself.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Polyline, Vec2};
use crate::link::{link_segments, LinkParams, OrderedThreadPoints};
use crate::raster::{unremap_param, BinaryMask, GradientMap, ScalarField};
use crate::ridge::{extract_line_points, LinePointSet, StegerParams};
use crate::search::{extract_segments, CurveSegment, SearchParams};
use crate::spline::{fit_spline, ThreadSpline, MIN_SPLINE_POINTS};

/// Consecutive ordered points closer than this are merged before fitting.
const DUPLICATE_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Thread width in pixels.
    pub w: f64,
    pub t_l: f64,
    pub t_u: f64,
    pub t_d: f64,
    pub t_v: f64,
    pub t_c: usize,
    pub mask_tolerance: f64,
    pub mask_threshold: f64,
    pub smoothing: f64,
    pub n_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            w: 4.0,
            t_l: 0.039,
            t_u: 0.196,
            t_d: 2.0,
            t_v: 0.1,
            t_c: 14,
            mask_tolerance: 0.2,
            mask_threshold: 0.5,
            smoothing: 0.0,
            n_samples: 200,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("mask_tolerance", self.mask_tolerance),
            ("mask_threshold", self.mask_threshold),
            ("smoothing", self.smoothing),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidArgument(format!("n_samples must be at least 2, got {}", self.n_samples)));
        }
        self.steger()?;
        self.search().validate()?;
        self.link().validate()
    }

    pub fn steger(&self) -> Result<StegerParams> {
        StegerParams::for_width(self.w, self.t_l, self.t_u)
    }

    pub fn search(&self) -> SearchParams {
        SearchParams { t_d: self.t_d, t_v: self.t_v }
    }

    pub fn link(&self) -> LinkParams {
        LinkParams { t_c: self.t_c }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output of conjugate fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub denoised: GradientMap,
    pub gray: ScalarField,
    pub mask: BinaryMask,
    /// Number of mask pixels rejected as inconsistent.
    pub removed: usize,
}

fn same_size(a: &GradientMap, b: &GradientMap) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::InvalidArgument(format!(
            "gradient map is {}x{} but conjugate is {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Reject thread pixels whose two parameters do not sum to one.
pub fn fuse_conjugate(g: &GradientMap, g_conj: &GradientMap, cfg: &PipelineConfig) -> Result<Fusion> {
    same_size(g, g_conj)?;
    let (w, h) = (g.width(), g.height());
    let mut gv = g.values().to_vec();
    let mut cv = g_conj.values().to_vec();
    let mut bits = vec![false; w * h];
    let mut removed = 0;
    for i in 0..w * h {
        if gv[i] + cv[i] <= cfg.mask_threshold {
            continue;
        }
        if (unremap_param(gv[i]) + unremap_param(cv[i]) - 1.0).abs() > cfg.mask_tolerance {
            gv[i] = 0.0;
            cv[i] = 0.0;
            removed += 1;
        } else {
            bits[i] = true;
        }
    }
    let gray = gv.iter().zip(&cv).map(|(a, b)| (a + b).clamp(0.0, 1.0)).collect();
    Ok(Fusion {
        denoised: GradientMap::new(w, h, gv)?,
        gray: ScalarField::new(w, h, gray)?,
        mask: BinaryMask::new(w, h, bits)?,
        removed,
    })
}

/// Indicator of `g > 0`, used when no conjugate map is available.
pub fn support_field(g: &GradientMap) -> ScalarField {
    let data = g.values().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    ScalarField::new(g.width(), g.height(), data).expect("same dimensions")
}

/// Ordering intensity of `g` at `p`, or `None` unless every tap that
/// carries weight lies on the thread (`g > 0`).
///
/// Taps that disagree by more than `t_v` straddle two passes of the thread
/// (a crossing); the nearest tap is used there instead of a blend.
pub fn sample_on_support(g: &GradientMap, p: Vec2, t_v: f64) -> Option<f64> {
    let (w, h) = (g.width(), g.height());
    let x = p.x.clamp(0.0, (w - 1) as f64);
    let y = p.y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let (mut acc, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    let mut nearest = (f64::NEG_INFINITY, 0.0);
    for (tx, ty, wt) in taps {
        if wt > 0.0 {
            let v = g.get(tx, ty);
            if v <= 0.0 {
                return None;
            }
            acc += wt * v;
            lo = lo.min(v);
            hi = hi.max(v);
            if wt > nearest.0 {
                nearest = (wt, v);
            }
        }
    }
    Some(if hi - lo > t_v { nearest.1 } else { acc })
}

/// Whether the pass of the thread with intensity `v` (within `t_v`) extends
/// `reach` pixels to both sides of `p` along `dir`.
fn spans_thread(g: &GradientMap, p: Vec2, dir: Vec2, reach: f64, v: f64, t_v: f64) -> bool {
    [p + dir * reach, p - dir * reach].iter().all(|q| {
        let (x, y) = (q.x.round(), q.y.round());
        if x < 0.0 || y < 0.0 || x as usize >= g.width() || y as usize >= g.height() {
            return false;
        }
        let s = g.get(x as usize, y as usize);
        s > 0.0 && (s - v).abs() <= t_v
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimings {
    pub fusion_ms: f64,
    pub ridge_ms: f64,
    pub search_ms: f64,
    pub link_ms: f64,
    pub fit_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub spline: ThreadSpline,
    pub sampled: Polyline,
    pub ordered: OrderedThreadPoints,
    pub segments: Vec<CurveSegment>,
    pub line_points: LinePointSet,
    pub fused_field: ScalarField,
    pub timings: StageTimings,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Drop points that repeat their predecessor's position.
fn dedup_positions(ordered: &OrderedThreadPoints) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(ordered.len());
    for p in &ordered.points {
        if out.last().is_none_or(|q| q.distance(p.pos) > DUPLICATE_DISTANCE) {
            out.push(p.pos);
        }
    }
    out
}

/// Reconstruct the ordered thread centerline from a gradient map and an
/// optional conjugate map.
pub fn reconstruct(g: &GradientMap, g_conj: Option<&GradientMap>, cfg: &PipelineConfig) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (denoised, gray) = match g_conj {
        Some(c) => {
            let f = fuse_conjugate(g, c, cfg)?;
            (f.denoised, f.gray)
        }
        None => (g.clone(), support_field(g)),
    };
    timings.fusion_ms = elapsed_ms(t);

    let t = Instant::now();
    let mut line_points = extract_line_points(&gray, &cfg.steger()?)?;
    // Keep points well inside one pass of the thread: their footprint stays
    // on the thread (this trims the rounded tips) and their own pass surrounds
    // them across and along (this drops edge responses at tight bends and
    // points touching the other pass at a crossing).
    let reach = cfg.w / 4.0;
    line_points.points.retain_mut(|p| match sample_on_support(&denoised, p.pos, cfg.t_v) {
        Some(v)
            if spans_thread(&denoised, p.pos, p.tangent.perp(), reach, v, cfg.t_v)
                && spans_thread(&denoised, p.pos, p.tangent, reach, v, cfg.t_v) =>
        {
            p.intensity = v;
            true
        }
        _ => false,
    });
    timings.ridge_ms = elapsed_ms(t);

    let t = Instant::now();
    let segments = extract_segments(&line_points, &cfg.search())?;
    timings.search_ms = elapsed_ms(t);

    let t = Instant::now();
    let ordered = match link_segments(&segments, &cfg.link()) {
        Ok(o) => o,
        Err(Error::AllSegmentsDropped { .. }) => return Err(Error::NoThreadDetected),
        Err(e) => return Err(e),
    };
    timings.link_ms = elapsed_ms(t);

    let t = Instant::now();
    let positions = dedup_positions(&ordered);
    if positions.len() < MIN_SPLINE_POINTS {
        return Err(Error::NoThreadDetected);
    }
    let spline = fit_spline(&positions, cfg.smoothing)?;
    let sampled = spline.sample(cfg.n_samples)?;
    timings.fit_ms = elapsed_ms(t);
    timings.total_ms = elapsed_ms(start);

    Ok(ReconstructionResult {
        spline,
        sampled,
        ordered,
        segments,
        line_points,
        fused_field: gray,
        timings,
    })
}

/// RGB overlay: the gray field as background, sampled points colored from
/// blue (start) to orange (end).
pub fn render_overlay(background: &ScalarField, sampled: &Polyline) -> Vec<u8> {
    let (w, h) = (background.width(), background.height());
    let mut rgb: Vec<u8> = background
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 160.0).round() as u8;
            [g, g, g]
        })
        .collect();
    let n = sampled.len().max(2) - 1;
    for (k, p) in sampled.points.iter().enumerate() {
        let t = k as f64 / n as f64;
        let color = [
            (30.0 + t * 225.0).round() as u8,
            (120.0 + t * 20.0).round() as u8,
            (255.0 - t * 225.0).round() as u8,
        ];
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    let i = (y as usize * w + x as usize) * 3;
                    rgb[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ottp;
    use crate::raster::remap_param;
    use crate::synth::{generate_scene, render_scene, resample_by_arclength, SceneConfig, ThreadCurve, SAMPLE_SPACING};

    fn one_pixel(g: f64, c: f64) -> (GradientMap, GradientMap) {
        (GradientMap::new(1, 1, vec![g]).unwrap(), GradientMap::new(1, 1, vec![c]).unwrap())
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = PipelineConfig::default();
        assert_eq!((c.w, c.t_l, c.t_u, c.t_d, c.t_v, c.t_c), (4.0, 0.039, 0.196, 2.0, 0.1, 14));
        assert_eq!((c.mask_tolerance, c.mask_threshold, c.smoothing, c.n_samples), (0.2, 0.5, 0.0, 200));
    }

    #[test]
    fn config_json_uses_field_names() {
        let c = PipelineConfig::from_json(br#"{"t_d": 3.0, "n_samples": 50}"#).unwrap();
        assert_eq!(c.t_d, 3.0);
        assert_eq!(c.n_samples, 50);
        assert_eq!(c.w, 4.0);
        assert!(PipelineConfig::from_json(br#"{"t_x": 1}"#).is_err());
        assert!(PipelineConfig::from_json(br#"{"t_u": 0.01}"#).is_err());
    }

    #[test]
    fn consistent_pair_is_kept() {
        let (g, c) = one_pixel(remap_param(0.3), remap_param(0.7));
        let f = fuse_conjugate(&g, &c, &PipelineConfig::default()).unwrap();
        assert_eq!(f.removed, 0);
        assert!(f.mask.get(0, 0));
        assert_eq!(f.denoised.values(), g.values());
        assert_eq!(f.gray.get(0, 0), 1.0);
    }

    #[test]
    fn inconsistent_pair_is_removed() {
        // Unremapped 0.5 + 0.1 = 0.6, off by 0.4 > 0.2.
        let (g, c) = one_pixel(remap_param(0.5), remap_param(0.1));
        let f = fuse_conjugate(&g, &c, &PipelineConfig::default()).unwrap();
        assert_eq!(f.removed, 1);
        assert!(!f.mask.get(0, 0));
        assert_eq!(f.denoised.get(0, 0), 0.0);
        assert_eq!(f.gray.get(0, 0), 0.0);
        // Unremapped 0.9 + 0.0 = 0.9, off by 0.1 <= 0.2.
        let (g, c) = one_pixel(remap_param(0.9), remap_param(0.0));
        assert_eq!(fuse_conjugate(&g, &c, &PipelineConfig::default()).unwrap().removed, 0);
    }

    #[test]
    fn background_is_untouched() {
        let (g, c) = one_pixel(0.0, 0.0);
        let f = fuse_conjugate(&g, &c, &PipelineConfig::default()).unwrap();
        assert!(!f.mask.get(0, 0));
        assert_eq!(f.removed, 0);
        assert_eq!(f.gray.get(0, 0), 0.0);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = GradientMap::zeros(3, 3).unwrap();
        let b = GradientMap::zeros(3, 4).unwrap();
        assert!(fuse_conjugate(&a, &b, &PipelineConfig::default()).is_err());
        assert!(reconstruct(&a, Some(&b), &PipelineConfig::default()).is_err());
    }

    #[test]
    fn perfect_scene_has_no_removed_pixels() {
        let gt = generate_scene(&SceneConfig { seed: 3, ..SceneConfig::default() }).unwrap();
        let f = fuse_conjugate(&gt.gradient, &gt.conjugate, &PipelineConfig::default()).unwrap();
        assert_eq!(f.removed, 0);
        assert_eq!(f.mask, gt.mask);
    }

    #[test]
    fn all_zero_map_detects_nothing() {
        let z = GradientMap::zeros(64, 48).unwrap();
        assert!(matches!(reconstruct(&z, Some(&z), &PipelineConfig::default()), Err(Error::NoThreadDetected)));
        assert!(matches!(reconstruct(&z, None, &PipelineConfig::default()), Err(Error::NoThreadDetected)));
    }

    fn straight_scene() -> crate::synth::SceneGroundTruth {
        let (a, b) = (Vec2::new(30.0, 40.0), Vec2::new(220.0, 150.0));
        let curve = ThreadCurve {
            width: 256,
            height: 192,
            control_points: vec![a, a.lerp(b, 1.0 / 3.0), a.lerp(b, 2.0 / 3.0), b],
            occluded: vec![false; 4],
            centerline: resample_by_arclength(&[a, b], SAMPLE_SPACING),
        };
        render_scene(curve, 4.0, Vec::new())
    }

    #[test]
    fn straight_thread_is_recovered_in_order() {
        let gt = straight_scene();
        let r = reconstruct(&gt.gradient, Some(&gt.conjugate), &PipelineConfig::default()).unwrap();
        assert_eq!(r.sampled.len(), 200);
        let m = ottp(&r.sampled, &gt.curve.centerline).unwrap();
        assert!(m.overall <= 1.0, "{m:?}");
        assert!(m.needle_end < 3.0 && m.tail_end < 3.0, "{m:?}");
        assert!(r.timings.total_ms >= 0.0);
    }

    #[test]
    fn crossing_scene_is_recovered() {
        let cfg = SceneConfig {
            min_self_intersections: 1,
            max_self_intersections: 1,
            seed: 11,
            ..SceneConfig::default()
        };
        let gt = generate_scene(&cfg).unwrap();
        let r = reconstruct(&gt.gradient, Some(&gt.conjugate), &PipelineConfig::default()).unwrap();
        let m = ottp(&r.sampled, &gt.curve.centerline).unwrap();
        assert!(m.overall <= 2.0, "{m:?}");
    }

    #[test]
    fn swapping_maps_reverses_the_curve() {
        let gt = generate_scene(&SceneConfig { seed: 5, ..SceneConfig::default() }).unwrap();
        let cfg = PipelineConfig::default();
        let a = reconstruct(&gt.gradient, Some(&gt.conjugate), &cfg).unwrap();
        let b = reconstruct(&gt.conjugate, Some(&gt.gradient), &cfg).unwrap();
        for (p, q) in a.sampled.points.iter().zip(b.sampled.points.iter().rev()) {
            assert!(p.distance(*q) < 1e-6, "{p:?} {q:?}");
        }
    }

    #[test]
    fn fusion_is_transparent_on_clean_input() {
        let gt = generate_scene(&SceneConfig { seed: 8, ..SceneConfig::default() }).unwrap();
        let cfg = PipelineConfig::default();
        let a = reconstruct(&gt.gradient, Some(&gt.conjugate), &cfg).unwrap();
        let b = reconstruct(&gt.gradient, None, &cfg).unwrap();
        assert_eq!(a.sampled, b.sampled);
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let gt = generate_scene(&SceneConfig { seed: 21, ..SceneConfig::default() }).unwrap();
        let cfg = PipelineConfig::default();
        let a = reconstruct(&gt.gradient, Some(&gt.conjugate), &cfg).unwrap();
        let b = reconstruct(&gt.gradient, Some(&gt.conjugate), &cfg).unwrap();
        assert_eq!(a.spline, b.spline);
    }

    #[test]
    fn sampling_requires_full_support() {
        let g = GradientMap::new(2, 1, vec![0.6, 0.0]).unwrap();
        assert_eq!(sample_on_support(&g, Vec2::new(0.0, 0.0), 0.1), Some(0.6));
        assert_eq!(sample_on_support(&g, Vec2::new(0.3, 0.0), 0.1), None);
        let g = GradientMap::new(2, 1, vec![0.45, 0.5]).unwrap();
        assert!((sample_on_support(&g, Vec2::new(0.4, 0.0), 0.1).unwrap() - 0.47).abs() < 1e-12);
    }

    #[test]
    fn sampling_across_two_passes_takes_nearest_tap() {
        let g = GradientMap::new(2, 1, vec![0.3, 0.8]).unwrap();
        assert_eq!(sample_on_support(&g, Vec2::new(0.4, 0.0), 0.1), Some(0.3));
        assert_eq!(sample_on_support(&g, Vec2::new(0.6, 0.0), 0.1), Some(0.8));
    }

    #[test]
    fn span_check_needs_thread_on_both_sides() {
        let g = GradientMap::new(5, 1, vec![0.0, 0.5, 0.5, 0.5, 0.0]).unwrap();
        let n = Vec2::new(1.0, 0.0);
        assert!(spans_thread(&g, Vec2::new(2.0, 0.0), n, 1.0, 0.5, 0.1));
        assert!(!spans_thread(&g, Vec2::new(3.0, 0.0), n, 1.0, 0.5, 0.1));
        let g = GradientMap::new(5, 1, vec![0.5, 0.5, 0.5, 0.9, 0.9]).unwrap();
        assert!(spans_thread(&g, Vec2::new(1.0, 0.0), n, 1.0, 0.5, 0.1));
        assert!(!spans_thread(&g, Vec2::new(2.0, 0.0), n, 1.0, 0.5, 0.1));
    }

    #[test]
    fn overlay_has_rgb_layout() {
        let f = ScalarField::filled(5, 4, 0.5).unwrap();
        let rgb = render_overlay(&f, &Polyline::new(vec![Vec2::new(2.0, 2.0), Vec2::new(4.0, 0.0)]));
        assert_eq!(rgb.len(), 60);
        assert_eq!(&rgb[0..3], &[80, 80, 80]);
        assert_eq!(&rgb[(2 * 5 + 2) * 3..(2 * 5 + 2) * 3 + 3], &[30, 120, 255]);
    }
}
