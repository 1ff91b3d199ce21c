//! Map and curve accuracy metrics.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::{Polyline, Vec2};
use crate::raster::GradientMap;
use crate::synth::CenterlineSample;

/// PSNR in dB with peak value 1. Identical maps give `f64::INFINITY`.
pub fn psnr(a: &GradientMap, b: &GradientMap) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::InvalidArgument(format!(
            "map sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let sum: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sum / a.values().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// Curve distance report, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OttpReport {
    /// Mean over predicted points of the distance to the nearest ground-truth sample.
    pub overall: f64,
    /// Predicted first point to the ground-truth start (s = 0).
    pub needle_end: f64,
    /// Predicted last point to the ground-truth end (s = 1).
    pub tail_end: f64,
}

fn nearest_distance(p: Vec2, gt: &[CenterlineSample]) -> f64 {
    gt.iter().map(|g| (g.pos - p).norm_sq()).fold(f64::INFINITY, f64::min).sqrt()
}

pub fn ottp(pred: &Polyline, gt: &[CenterlineSample]) -> Result<OttpReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InvalidArgument("OTTP needs non-empty prediction and ground truth".into()));
    }
    let total: f64 = pred.points.iter().map(|&p| nearest_distance(p, gt)).sum();
    let start = gt.iter().min_by(|a, b| a.s.total_cmp(&b.s)).expect("non-empty");
    let end = gt.iter().max_by(|a, b| a.s.total_cmp(&b.s)).expect("non-empty");
    Ok(OttpReport {
        overall: total / pred.len() as f64,
        needle_end: pred.points[0].distance(start.pos),
        tail_end: pred.points[pred.len() - 1].distance(end.pos),
    })
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Per-frame metrics record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: f64,
    pub ottp: OttpReport,
}

impl FrameMetrics {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_line(from: Vec2, to: Vec2, spacing: f64) -> Vec<CenterlineSample> {
        let n = (from.distance(to) / spacing).ceil() as usize;
        (0..=n)
            .map(|i| {
                let s = i as f64 / n as f64;
                CenterlineSample { pos: from.lerp(to, s), s }
            })
            .collect()
    }

    fn map(v: f64) -> GradientMap {
        GradientMap::new(4, 3, vec![v; 12]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&map(0.3), &map(0.3)).unwrap(), f64::INFINITY);
        assert!((psnr(&map(0.2), &map(0.3)).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&map(0.0), &map(1.0)).unwrap().abs() < 1e-12);
        let other = GradientMap::zeros(3, 4).unwrap();
        assert!(psnr(&map(0.0), &other).is_err());
    }

    #[test]
    fn identical_curves_score_zero() {
        let gt = dense_line(Vec2::new(0.0, 0.0), Vec2::new(100.0, 30.0), 0.25);
        let pred = Polyline::new(gt.iter().map(|g| g.pos).collect());
        assert_eq!(ottp(&pred, &gt).unwrap(), OttpReport::default());
    }

    #[test]
    fn shifted_prediction_scores_shift_distance() {
        // Line orthogonal to the (3, 4) shift, so every nearest distance is 5.
        let dir = Vec2::new(-4.0, 3.0) * (1.0 / 5.0);
        let gt = dense_line(dir * -200.0, dir * 200.0, 0.05);
        let pred = Polyline::new((0..50).map(|i| dir * (i as f64 * 3.0 - 75.0) + Vec2::new(3.0, 4.0)).collect());
        let r = ottp(&pred, &gt).unwrap();
        assert!((4.99..=5.0).contains(&r.overall), "{}", r.overall);
    }

    #[test]
    fn swapped_endpoints_cost_the_curve_length() {
        let gt = dense_line(Vec2::new(0.0, 0.0), Vec2::new(120.0, 0.0), 0.25);
        let pred = Polyline::new(gt.iter().rev().map(|g| g.pos).collect());
        let r = ottp(&pred, &gt).unwrap();
        assert!(r.overall < 1e-12);
        assert!((r.needle_end - 120.0).abs() < 1e-9);
        assert!((r.tail_end - 120.0).abs() < 1e-9);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let gt = dense_line(Vec2::ZERO, Vec2::new(1.0, 0.0), 0.5);
        assert!(ottp(&Polyline::default(), &gt).is_err());
        assert!(ottp(&Polyline::new(vec![Vec2::ZERO]), &[]).is_err());
    }

    #[test]
    fn infinite_psnr_serializes_as_string() {
        let m = FrameMetrics {
            psnr_db: f64::INFINITY,
            ottp: OttpReport::default(),
        };
        let v: serde_json::Value = serde_json::from_slice(&m.to_json()).unwrap();
        assert_eq!(v["psnr_db"], "inf");
        assert_eq!(v["ottp"]["overall"], 0.0);
        let m = FrameMetrics { psnr_db: 31.5, ..m };
        let v: serde_json::Value = serde_json::from_slice(&m.to_json()).unwrap();
        assert_eq!(v["psnr_db"], 31.5);
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_decreasing(a in proptest::collection::vec(0.0f64..1.0, 12), b in proptest::collection::vec(0.0f64..1.0, 12), k in 1.01f64..3.0) {
            let ma = GradientMap::new(4, 3, a.clone()).unwrap();
            let mb = GradientMap::new(4, 3, b.clone()).unwrap();
            prop_assert_eq!(psnr(&ma, &mb).unwrap(), psnr(&mb, &ma).unwrap());
            // Scaling every difference by k > 1 raises MSE, so PSNR drops.
            let scaled: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + (y - x) / k).collect();
            let near = GradientMap::new(4, 3, scaled).unwrap();
            if a != b {
                prop_assert!(psnr(&ma, &near).unwrap() > psnr(&ma, &mb).unwrap());
            }
        }

        #[test]
        fn ottp_ignores_gt_order_and_pred_repeats(
            pts in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0), 2..30),
            pred in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0), 1..20),
            reps in 1usize..4,
        ) {
            let gt: Vec<CenterlineSample> = pts.iter().enumerate().map(|(i, &(x, y))| CenterlineSample { pos: Vec2::new(x, y), s: i as f64 }).collect();
            let mut shuffled = gt.clone();
            shuffled.reverse();
            let p = Polyline::new(pred.iter().map(|&(x, y)| Vec2::new(x, y)).collect());
            let dense = Polyline::new(p.points.iter().flat_map(|&q| std::iter::repeat_n(q, reps)).collect());
            let base = ottp(&p, &gt).unwrap().overall;
            prop_assert!((ottp(&p, &shuffled).unwrap().overall - base).abs() < 1e-9);
            prop_assert!((ottp(&dense, &gt).unwrap().overall - base).abs() < 1e-9);
        }
    }
}
