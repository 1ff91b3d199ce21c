//! Ordering and concatenation of curve segments.
//!
//! Each kept segment is oriented so its intensity increases along it, then the
//! segments are sorted by mean intensity and joined. The result runs from the
//! low-intensity end of the thread to the high-intensity end.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::ridge::LinePoint;
use crate::search::CurveSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkParams {
    /// Minimum number of points in a kept segment.
    pub t_c: usize,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self { t_c: 14 }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_c < 1 {
            return Err(Error::InvalidArgument("t_c must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrderedThreadPoints {
    pub points: Vec<LinePoint>,
    /// Start index of every joined segment after the first.
    pub segment_boundaries: Vec<usize>,
}

impl OrderedThreadPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Least-squares slope of intensity against collection index.
///
/// The numerator is accumulated over mirrored index pairs, so reversing the
/// segment negates the result exactly.
pub fn intensity_slope(points: &[LinePoint]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("slope needs at least 2 points, got {n}")));
    }
    let mut num = 0.0;
    for i in 0..n / 2 {
        let weight = (n - 1 - 2 * i) as f64 / 2.0;
        num += weight * (points[n - 1 - i].intensity - points[i].intensity);
    }
    let nf = n as f64;
    let den = nf * (nf * nf - 1.0) / 12.0;
    Ok(num / den)
}

pub fn segment_direction(seg: &CurveSegment) -> Result<Direction> {
    Ok(if intensity_slope(&seg.points)? < 0.0 {
        Direction::Descending
    } else {
        Direction::Ascending
    })
}

fn cmp_points(a: &LinePoint, b: &LinePoint) -> Ordering {
    a.pos
        .y
        .total_cmp(&b.pos.y)
        .then(a.pos.x.total_cmp(&b.pos.x))
        .then(a.intensity.total_cmp(&b.intensity))
        .then(a.tangent.y.total_cmp(&b.tangent.y))
        .then(a.tangent.x.total_cmp(&b.tangent.x))
        .then(a.response.total_cmp(&b.response))
        .then(a.pixel.cmp(&b.pixel))
}

/// Orient a segment to ascending intensity. A flat segment is oriented so
/// its first point precedes its last in (y, x) order.
fn orient(points: &[LinePoint]) -> Result<Vec<LinePoint>> {
    let slope = intensity_slope(points)?;
    let reverse = if slope == 0.0 {
        cmp_points(&points[0], &points[points.len() - 1]).is_gt()
    } else {
        slope < 0.0
    };
    Ok(if reverse {
        points.iter().rev().copied().collect()
    } else {
        points.to_vec()
    })
}

pub fn link_segments(segs: &[CurveSegment], params: &LinkParams) -> Result<OrderedThreadPoints> {
    params.validate()?;
    if segs.is_empty() {
        return Ok(OrderedThreadPoints::default());
    }
    let min_points = params.t_c.max(2);
    let mut kept: Vec<CurveSegment> = segs
        .iter()
        .filter(|s| s.len() >= min_points)
        .map(|s| orient(&s.points).map(CurveSegment::new))
        .collect::<Result<_>>()?;
    if kept.is_empty() {
        return Err(Error::AllSegmentsDropped {
            segments: segs.len(),
            min_points,
        });
    }
    kept.sort_by(|a, b| {
        let (ca, cb) = (a.centroid(), b.centroid());
        a.mean_intensity
            .total_cmp(&b.mean_intensity)
            .then(ca.y.total_cmp(&cb.y))
            .then(ca.x.total_cmp(&cb.x))
            .then_with(|| {
                a.points
                    .iter()
                    .zip(&b.points)
                    .map(|(p, q)| cmp_points(p, q))
                    .find(|o| o.is_ne())
                    .unwrap_or_else(|| a.len().cmp(&b.len()))
            })
    });
    let mut out = OrderedThreadPoints::default();
    for s in kept {
        if !out.points.is_empty() {
            out.segment_boundaries.push(out.points.len());
        }
        out.points.extend(s.points);
    }
    Ok(out)
}
