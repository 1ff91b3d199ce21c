//! Endpoint detection and region growing over extracted line points.
//!
//! The polarity of a point is the mean signed projection of its neighbors onto
//! its tangent. Interior points of a curve see neighbors on both sides and score
//! near zero; endpoints see neighbors on one side only. Segments are grown from
//! the most polar point, removed, and the process repeats until no points remain.
//!
//! Both thresholds are inclusive: a neighbor exactly `t_d` away counts.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::ridge::{LinePoint, LinePointSet};

/// Polarity of a point with no neighbors.
pub const ISOLATED_POLARITY: f64 = f64::INFINITY;

const FULL_REFRESH_INTERVAL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    /// Distance threshold (pixels).
    pub t_d: f64,
    /// Intensity threshold.
    pub t_v: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { t_d: 2.0, t_v: 0.1 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_d > 0.0) || !self.t_d.is_finite() {
            return Err(Error::InvalidArgument(format!("t_d must be positive, got {}", self.t_d)));
        }
        if !(self.t_v > 0.0) || !self.t_v.is_finite() {
            return Err(Error::InvalidArgument(format!("t_v must be positive, got {}", self.t_v)));
        }
        Ok(())
    }
}

/// Run of points in collection order.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSegment {
    pub points: Vec<LinePoint>,
    pub mean_intensity: f64,
}

impl CurveSegment {
    pub fn new(points: Vec<LinePoint>) -> Self {
        let mean_intensity = if points.is_empty() {
            0.0
        } else {
            points.iter().map(|p| p.intensity).sum::<f64>() / points.len() as f64
        };
        Self { points, mean_intensity }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn reversed(&self) -> CurveSegment {
        CurveSegment::new(self.points.iter().rev().copied().collect())
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.points.len().max(1) as f64;
        let sum = self.points.iter().fold(Vec2::ZERO, |acc, p| acc + p.pos);
        sum * (1.0 / n)
    }
}

fn is_neighbor(p: &LinePoint, q: &LinePoint, params: &SearchParams) -> bool {
    p.pos.distance(q.pos) <= params.t_d && (p.intensity - q.intensity).abs() <= params.t_v
}

fn polarity_from(p: &LinePoint, neighbors: impl Iterator<Item = LinePoint>) -> f64 {
    let (mut sum, mut m) = (0.0, 0usize);
    for q in neighbors {
        sum += (q.pos - p.pos).dot(p.tangent);
        m += 1;
    }
    if m == 0 {
        ISOLATED_POLARITY
    } else {
        (sum / m as f64).abs()
    }
}

/// Polarity of `p` against every other point of `set` (brute force).
pub fn polarity(p: &LinePoint, set: &LinePointSet, params: &SearchParams) -> f64 {
    polarity_from(p, set.points.iter().filter(|q| *q != p && is_neighbor(p, q, params)).copied())
}

/// Uniform grid over point positions with removal flags.
struct PointGrid {
    points: Vec<LinePoint>,
    alive: Vec<bool>,
    cells: Vec<Vec<usize>>,
    origin: Vec2,
    cell: f64,
    cols: usize,
    rows: usize,
    reach: i64,
}

impl PointGrid {
    fn new(points: Vec<LinePoint>, cell: f64) -> Self {
        let (mut min, mut max) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in &points {
            min = Vec2::new(min.x.min(p.pos.x), min.y.min(p.pos.y));
            max = Vec2::new(max.x.max(p.pos.x), max.y.max(p.pos.y));
        }
        if points.is_empty() {
            min = Vec2::ZERO;
            max = Vec2::ZERO;
        }
        let cols = ((max.x - min.x) / cell).floor() as usize + 1;
        let rows = ((max.y - min.y) / cell).floor() as usize + 1;
        let mut grid = Self {
            alive: vec![true; points.len()],
            cells: vec![Vec::new(); cols * rows],
            origin: min,
            cell,
            cols,
            rows,
            reach: 1,
            points,
        };
        for i in 0..grid.points.len() {
            let (cx, cy) = grid.cell_of(grid.points[i].pos);
            grid.cells[cy * cols + cx].push(i);
        }
        grid
    }

    fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let cx = ((p.x - self.origin.x) / self.cell).floor().clamp(0.0, (self.cols - 1) as f64);
        let cy = ((p.y - self.origin.y) / self.cell).floor().clamp(0.0, (self.rows - 1) as f64);
        (cx as usize, cy as usize)
    }

    /// Alive point indices in the cells around `p` (a superset of the `t_d` disc).
    fn nearby(&self, p: Vec2) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.cell_of(p);
        let (cx, cy) = (cx as i64, cy as i64);
        let r = self.reach;
        (cy - r..=cy + r)
            .filter(move |&y| y >= 0 && y < self.rows as i64)
            .flat_map(move |y| {
                (cx - r..=cx + r)
                    .filter(move |&x| x >= 0 && x < self.cols as i64)
                    .flat_map(move |x| self.cells[y as usize * self.cols + x as usize].iter().copied())
            })
            .filter(move |&j| self.alive[j])
    }

    fn polarity(&self, i: usize, params: &SearchParams) -> f64 {
        let p = &self.points[i];
        polarity_from(
            p,
            self.nearby(p.pos)
                .filter(|&j| j != i && is_neighbor(p, &self.points[j], params))
                .map(|j| self.points[j]),
        )
    }

    /// Grow from `seed`, marking collected points dead. Returns collected indices.
    fn grow(&mut self, seed: usize, params: &SearchParams) -> Vec<usize> {
        self.alive[seed] = false;
        let mut collected = vec![seed];
        let mut current = seed;
        loop {
            let c = self.points[current];
            let mut best: Option<(f64, f64, f64, f64, usize)> = None;
            for j in self.nearby(c.pos) {
                let q = &self.points[j];
                if !is_neighbor(&c, q, params) {
                    continue;
                }
                let key = (c.pos.distance(q.pos), (c.intensity - q.intensity).abs(), q.pos.y, q.pos.x, j);
                if best.is_none_or(|b| key_less(&key, &b)) {
                    best = Some(key);
                }
            }
            match best {
                Some((.., j)) => {
                    self.alive[j] = false;
                    collected.push(j);
                    current = j;
                }
                None => return collected,
            }
        }
    }
}

fn key_less(a: &(f64, f64, f64, f64, usize), b: &(f64, f64, f64, f64, usize)) -> bool {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.total_cmp(&b.2))
        .then(a.3.total_cmp(&b.3))
        .then(a.4.cmp(&b.4))
        .is_lt()
}

/// Index of the maximum polarity among alive points; ties go to lowest y, then x.
fn argmax_polarity(points: &[LinePoint], alive: &[bool], pol: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in (0..points.len()).filter(|&i| alive[i]) {
        best = match best {
            None => Some(i),
            Some(b) => {
                let ord = pol[i]
                    .total_cmp(&pol[b])
                    .then(points[b].pos.y.total_cmp(&points[i].pos.y))
                    .then(points[b].pos.x.total_cmp(&points[i].pos.x));
                Some(if ord.is_gt() { i } else { b })
            }
        };
    }
    best
}

/// Polarity of every point in `set`, in set order.
pub fn polarity_map(set: &LinePointSet, params: &SearchParams) -> Result<Vec<f64>> {
    params.validate()?;
    let grid = PointGrid::new(set.points.clone(), params.t_d);
    Ok((0..set.len()).map(|i| grid.polarity(i, params)).collect())
}

pub fn most_salient_endpoint(set: &LinePointSet, params: &SearchParams) -> Result<LinePoint> {
    let pol = polarity_map(set, params)?;
    let alive = vec![true; set.len()];
    argmax_polarity(&set.points, &alive, &pol)
        .map(|i| set.points[i])
        .ok_or_else(|| Error::InvalidArgument("cannot pick an endpoint from an empty point set".into()))
}

/// Grow one segment from `seed` and return it with the points left over.
pub fn grow_segment(
    seed: &LinePoint,
    set: &LinePointSet,
    params: &SearchParams,
) -> Result<(CurveSegment, LinePointSet)> {
    params.validate()?;
    let seed_index = set
        .points
        .iter()
        .position(|p| p == seed)
        .ok_or_else(|| Error::InvalidArgument("seed is not a member of the point set".into()))?;
    let mut grid = PointGrid::new(set.points.clone(), params.t_d);
    let collected = grid.grow(seed_index, params);
    let segment = CurveSegment::new(collected.iter().map(|&i| set.points[i]).collect());
    let remaining = LinePointSet {
        points: (0..set.len()).filter(|&i| grid.alive[i]).map(|i| set.points[i]).collect(),
        width: set.width,
        height: set.height,
    };
    Ok((segment, remaining))
}

/// Partition `set` into segments by repeated endpoint selection and growth.
pub fn extract_segments(set: &LinePointSet, params: &SearchParams) -> Result<Vec<CurveSegment>> {
    params.validate()?;
    let mut grid = PointGrid::new(set.points.clone(), params.t_d);
    let mut pol: Vec<f64> = (0..set.len()).map(|i| grid.polarity(i, params)).collect();
    let mut segments = Vec::new();
    let mut dirty = vec![false; set.len()];
    while let Some(seed) = argmax_polarity(&grid.points, &grid.alive, &pol) {
        let collected = grid.grow(seed, params);
        segments.push(CurveSegment::new(collected.iter().map(|&i| grid.points[i]).collect()));
        if segments.len() % FULL_REFRESH_INTERVAL == 0 {
            for i in (0..set.len()).filter(|&i| grid.alive[i]) {
                pol[i] = grid.polarity(i, params);
            }
            continue;
        }
        // Only points that had a removed point in range can change.
        let mut touched = Vec::new();
        for &r in &collected {
            let rp = grid.points[r].pos;
            for j in grid.nearby(rp) {
                if !dirty[j] && grid.points[j].pos.distance(rp) <= params.t_d {
                    dirty[j] = true;
                    touched.push(j);
                }
            }
        }
        for j in touched {
            dirty[j] = false;
            pol[j] = grid.polarity(j, params);
        }
    }
    Ok(segments)
}
