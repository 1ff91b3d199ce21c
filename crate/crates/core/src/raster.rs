//! Raster types shared by every stage.
//!
//! All rasters are row-major with a top-left origin. Gradient maps store the
//! thread parameter `s` affinely remapped into `[PARAM_FLOOR, 1]` so that `0`
//! is reserved for background; use [`remap_param`] and [`unremap_param`] to
//! convert.

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Stored value of the needle end (`s = 0`).
pub const PARAM_FLOOR: f64 = 0.1;

/// Map a thread parameter `s` in `[0, 1]` to its stored gradient-map value.
pub fn remap_param(s: f64) -> f64 {
    PARAM_FLOOR + (1.0 - PARAM_FLOOR) * s
}

/// Inverse of [`remap_param`]. Not clamped: background (`0`) maps below zero.
pub fn unremap_param(v: f64) -> f64 {
    (v - PARAM_FLOOR) / (1.0 - PARAM_FLOOR)
}

/// Dense real-valued field with no range constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "field dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "field of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Location of the first non-finite sample, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i % self.width, i / self.width))
    }

    /// Bilinear sample with pixel centers at integer coordinates; clamps to the border.
    pub fn sample_bilinear(&self, p: Vec2) -> f64 {
        let x = p.x.clamp(0.0, (self.width - 1) as f64);
        let y = p.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Rotate by 90° so that pixel `(x, y)` moves to `(height - 1 - y, x)`.
    pub fn rotate90(&self) -> ScalarField {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let nx = h - 1 - y;
                let ny = x;
                out[ny * h + nx] = self.get(x, y);
            }
        }
        ScalarField {
            width: h,
            height: w,
            data: out,
        }
    }
}

/// Resize with bilinear interpolation using the half-pixel-center convention.
///
/// Source coordinates are clamped to the valid range, so every output is a
/// convex combination of input samples.
pub fn resize_bilinear(field: &ScalarField, target_w: usize, target_h: usize) -> Result<ScalarField> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {target_w}x{target_h}"
        )));
    }
    if target_w == field.width && target_h == field.height {
        return Ok(field.clone());
    }
    let sx = field.width as f64 / target_w as f64;
    let sy = field.height as f64 / target_h as f64;
    let mut out = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..target_w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            out.push(field.sample_bilinear(Vec2::new(src_x, src_y)));
        }
    }
    ScalarField::new(target_w, target_h, out)
}

/// Scalar raster in `[0, 1]` whose thread pixels carry the remapped thread
/// parameter and whose background is `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap(ScalarField);

impl GradientMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_field(ScalarField::new(width, height, values)?)
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn from_field(field: ScalarField) -> Result<Self> {
        if let Some(i) = field.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "gradient value {} at pixel ({}, {}) is outside [0, 1]",
                field.data[i],
                i % field.width,
                i / field.width
            )));
        }
        Ok(Self(field))
    }

    /// Build a map by clamping every value into `[0, 1]`; NaN becomes `0`.
    pub fn from_field_clamped(mut field: ScalarField) -> Self {
        for v in field.data.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self(field)
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }

    pub fn into_field(self) -> ScalarField {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    /// Pixels with a non-zero value.
    pub fn support(&self) -> BinaryMask {
        BinaryMask {
            width: self.width(),
            height: self.height(),
            bits: self.values().iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn resize(&self, target_w: usize, target_h: usize) -> Result<GradientMap> {
        // Convex combinations stay inside [0, 1].
        Ok(GradientMap(resize_bilinear(&self.0, target_w, target_h)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OverlapLabel {
    #[default]
    Background = 0,
    NonOverlap = 1,
    Overlap = 2,
}

impl OverlapLabel {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Background),
            1 => Some(Self::NonOverlap),
            2 => Some(Self::Overlap),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMap {
    width: usize,
    height: usize,
    labels: Vec<OverlapLabel>,
}

impl OverlapMap {
    pub fn new(width: usize, height: usize, labels: Vec<OverlapLabel>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "overlap map of {width}x{height} got {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[OverlapLabel] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> OverlapLabel {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: OverlapLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask of {width}x{height} got {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}
