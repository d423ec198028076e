use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use super::Plane;
use crate::error::{Error, Result};
use crate::volume::ComplexVolume;

/// A 2D magnitude image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Magnitude slice `index` of `plane`. Rows run along z for coronal and
/// sagittal slices and along y for axial ones.
pub fn extract_slice(volume: &ComplexVolume, plane: Plane, index: usize) -> Result<Slice> {
    let d = volume.dims;
    let n = d.as_array()[plane.axis()];
    if index >= n {
        return Err(Error::InvalidArgument(format!(
            "{plane:?} slice {index} outside axis of length {n}"
        )));
    }
    let (width, height) = match plane {
        Plane::Coronal => (d.nx, d.nz),
        Plane::Sagittal => (d.ny, d.nz),
        Plane::Axial => (d.nx, d.ny),
    };
    let mut data = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let v = match plane {
                Plane::Coronal => volume.get(c, index, r),
                Plane::Sagittal => volume.get(index, c, r),
                Plane::Axial => volume.get(c, r, index),
            };
            data.push(v.norm());
        }
    }
    Ok(Slice { width, height, data })
}

/// Nearest-rank percentile, `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// 8-bit grayscale PNG of `data`, windowed to [0, 99th percentile].
pub fn gray_png(width: usize, height: usize, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {width}x{height} image",
            data.len()
        )));
    }
    let hi = percentile(data, 99.0);
    let pixels: Vec<u8> = data
        .iter()
        .map(|v| {
            if hi > 0.0 {
                (v / hi * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::NoFilter).write_image(
        &pixels,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
    )?;
    Ok(out)
}

pub fn render_slice(volume: &ComplexVolume, plane: Plane, index: usize) -> Result<Vec<u8>> {
    let s = extract_slice(volume, plane, index)?;
    gray_png(s.width, s.height, &s.data)
}

pub fn write_slice_png(path: &Path, volume: &ComplexVolume, plane: Plane, index: usize) -> Result<()> {
    std::fs::write(path, render_slice(volume, plane, index)?)?;
    Ok(())
}
