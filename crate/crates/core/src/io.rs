//! File formats.
//!
//! - Gradient maps: PNG, 16-bit, one gray channel; `value = stored / 65535`.
//! - Overlap maps: PNG, 8-bit, one gray channel, codes `{0, 1, 2}`.
//! - Ground truth: JSON, see [`GroundTruthFile`].
//!
//! Encoding settings are fixed so identical rasters always produce identical
//! bytes.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Compression, Filter, Transformations};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GradientMap, OverlapLabel, OverlapMap};

const GRADIENT_SCALE: f64 = 65535.0;

fn encode_png(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.set_compression(Compression::Fast);
        enc.set_filter(Filter::Sub);
        // Writing into a Vec cannot fail for a well-formed header and payload.
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(data).expect("png payload");
        writer.finish().expect("png trailer");
    }
    out
}

struct DecodedPng {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8]) -> Result<DecodedPng> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("malformed PNG: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG image too large".into()))?;
    let mut data = vec![0; size];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| Error::Format(format!("malformed PNG: {e}")))?;
    data.truncate(info.buffer_size());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn require_gray(png: &DecodedPng, depth: BitDepth) -> Result<()> {
    if png.color != ColorType::Grayscale {
        return Err(Error::Format(format!(
            "expected 1 channel (grayscale), found {:?} with {} channels",
            png.color,
            png.color.samples()
        )));
    }
    if png.depth != depth {
        return Err(Error::Format(format!(
            "expected bit depth {}, found {}",
            depth as u8, png.depth as u8
        )));
    }
    Ok(())
}

/// Quantize a gradient map to 16 bits per pixel (round to nearest).
pub fn quantize_gradient(value: f64) -> u16 {
    (value * GRADIENT_SCALE).round() as u16
}

pub fn encode_gradient_map(map: &GradientMap) -> Vec<u8> {
    let mut payload = Vec::with_capacity(map.values().len() * 2);
    for &v in map.values() {
        payload.extend_from_slice(&quantize_gradient(v).to_be_bytes());
    }
    encode_png(map.width(), map.height(), ColorType::Grayscale, BitDepth::Sixteen, &payload)
}

pub fn decode_gradient_map(bytes: &[u8]) -> Result<GradientMap> {
    let png = decode_png(bytes)?;
    require_gray(&png, BitDepth::Sixteen)?;
    let values = png
        .data
        .chunks_exact(2)
        .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / GRADIENT_SCALE)
        .collect();
    GradientMap::new(png.width, png.height, values)
}

pub fn encode_overlap_map(map: &OverlapMap) -> Vec<u8> {
    let payload: Vec<u8> = map.labels().iter().map(|l| l.code()).collect();
    encode_png(map.width(), map.height(), ColorType::Grayscale, BitDepth::Eight, &payload)
}

pub fn decode_overlap_map(bytes: &[u8]) -> Result<OverlapMap> {
    let png = decode_png(bytes)?;
    require_gray(&png, BitDepth::Eight)?;
    let labels = png
        .data
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            OverlapLabel::from_code(code).ok_or_else(|| {
                Error::Format(format!(
                    "overlap label {code} at pixel ({}, {}) is not in {{0, 1, 2}}",
                    i % png.width,
                    i / png.width
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    OverlapMap::new(png.width, png.height, labels)
}

/// 8-bit RGB image, row-major, used for overlays.
pub fn encode_rgb(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    encode_png(width, height, ColorType::Rgb, BitDepth::Eight, rgb)
}

pub fn read_gradient_map(path: &Path) -> Result<GradientMap> {
    decode_gradient_map(&std::fs::read(path)?)
}

pub fn write_gradient_map(path: &Path, map: &GradientMap) -> Result<()> {
    std::fs::write(path, encode_gradient_map(map))?;
    Ok(())
}

pub fn read_overlap_map(path: &Path) -> Result<OverlapMap> {
    decode_overlap_map(&std::fs::read(path)?)
}

pub fn write_overlap_map(path: &Path, map: &OverlapMap) -> Result<()> {
    std::fs::write(path, encode_overlap_map(map))?;
    Ok(())
}

/// On-disk ground-truth record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub width: usize,
    pub height: usize,
    pub control_points: Vec<[f64; 2]>,
    pub occluded: Vec<bool>,
    /// `[x, y, s]` with `s` strictly increasing.
    pub centerline: Vec<[f64; 3]>,
}

impl GroundTruthFile {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Format("ground truth dimensions must be positive".into()));
        }
        if self.occluded.len() != self.control_points.len() {
            return Err(Error::Format(format!(
                "{} occlusion flags for {} control points",
                self.occluded.len(),
                self.control_points.len()
            )));
        }
        if let Some(i) = self.centerline.windows(2).position(|w| w[1][2] <= w[0][2]) {
            return Err(Error::Format(format!(
                "centerline parameter not strictly increasing at sample {}",
                i + 1
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.control_points.iter().all(|p| finite(p)) || !self.centerline.iter().all(|p| finite(p)) {
            return Err(Error::Format("ground truth contains non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let gt: GroundTruthFile = serde_json::from_slice(bytes)?;
        gt.validate()?;
        Ok(gt)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("ground truth serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_full_scale_decode_exactly() {
        let map = GradientMap::new(2, 1, vec![0.0, 1.0]).unwrap();
        let decoded = decode_gradient_map(&encode_gradient_map(&map)).unwrap();
        assert_eq!(decoded.values(), &[0.0, 1.0]);
    }

    #[test]
    fn half_quantizes_to_32768() {
        assert_eq!(quantize_gradient(0.5), 32768);
        assert_eq!(quantize_gradient(1.0), 65535);
        assert_eq!(quantize_gradient(0.0), 0);
    }

    #[test]
    fn all_zero_map_has_all_zero_payload() {
        let map = GradientMap::zeros(5, 3).unwrap();
        let png = decode_png(&encode_gradient_map(&map)).unwrap();
        assert_eq!(png.data.len(), 30);
        assert!(png.data.iter().all(|&b| b == 0));
    }

    #[test]
    fn eight_bit_file_is_rejected_as_gradient_map() {
        let bytes = encode_png(2, 2, ColorType::Grayscale, BitDepth::Eight, &[0, 1, 2, 3]);
        let err = decode_gradient_map(&bytes).unwrap_err();
        assert!(err.to_string().contains("bit depth 16"), "{err}");
    }

    #[test]
    fn rgb_file_is_rejected_as_gradient_map() {
        let bytes = encode_rgb(1, 1, &[1, 2, 3]);
        let err = decode_gradient_map(&bytes).unwrap_err();
        assert!(err.to_string().contains("1 channel"), "{err}");
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(decode_gradient_map(b"not a png"), Err(Error::Format(_))));
        assert!(matches!(decode_overlap_map(&[]), Err(Error::Format(_))));
    }

    #[test]
    fn overlap_codes_outside_palette_are_rejected() {
        let bytes = encode_png(2, 1, ColorType::Grayscale, BitDepth::Eight, &[1, 3]);
        let err = decode_overlap_map(&bytes).unwrap_err();
        assert!(err.to_string().contains("label 3"), "{err}");
    }

    #[test]
    fn overlap_map_round_trip() {
        use OverlapLabel::*;
        let map = OverlapMap::new(3, 1, vec![Background, NonOverlap, Overlap]).unwrap();
        let bytes = encode_overlap_map(&map);
        assert_eq!(decode_overlap_map(&bytes).unwrap(), map);
    }

    #[test]
    fn ground_truth_rejects_non_increasing_parameter() {
        let gt = GroundTruthFile {
            width: 4,
            height: 4,
            control_points: vec![[0.0, 0.0]],
            occluded: vec![false],
            centerline: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        };
        assert!(GroundTruthFile::from_json(&gt.to_json()).is_err());
    }

    proptest! {
        #[test]
        fn encoded_files_round_trip_byte_exact(
            w in 1usize..9, h in 1usize..9,
            raw in proptest::collection::vec(any::<u16>(), 81)
        ) {
            let values = (0..w * h).map(|i| f64::from(raw[i]) / 65535.0).collect();
            let bytes = encode_gradient_map(&GradientMap::new(w, h, values).unwrap());
            let again = encode_gradient_map(&decode_gradient_map(&bytes).unwrap());
            prop_assert_eq!(bytes, again);
        }

        #[test]
        fn decode_encode_within_one_quantum(v in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let map = GradientMap::new(4, 3, v.clone()).unwrap();
            let back = decode_gradient_map(&encode_gradient_map(&map)).unwrap();
            for (a, b) in v.iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }
}
