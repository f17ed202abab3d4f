use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Result, StereoError};
use crate::Tensor;

/// Sparse disparity from a 16-bit PNG: stored value / 256, 0 meaning no
/// measurement.
#[derive(Debug, Clone)]
pub struct KittiDisparity {
    /// `[1, 1, H, W]`.
    pub disparity: Tensor,
    /// `[1, 1, H, W]`, 1 where a value was stored.
    pub mask: Tensor,
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| StereoError::format(path, e.to_string()))
}

pub fn read_kitti_disp_png(path: impl AsRef<Path>) -> Result<KittiDisparity> {
    let path = path.as_ref();
    let img = match open(path)? {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(StereoError::format(
                path,
                format!("expected a 16-bit grayscale PNG, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let disp = raw.iter().map(|&v| v as f32 / 256.0).collect();
    let mask = raw.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
    Ok(KittiDisparity {
        disparity: Tensor::new(disp, &[1, 1, h, w])?,
        mask: Tensor::new(mask, &[1, 1, h, w])?,
    })
}

/// Writes `round(d * 256)` where `mask > 0` and 0 elsewhere.
pub fn write_kitti_disp_png(path: impl AsRef<Path>, disparity: &[f32], mask: &[f32], width: usize, height: usize) -> Result<()> {
    let path = path.as_ref();
    if disparity.len() != width * height || mask.len() != width * height {
        return Err(StereoError::pre("disparity and mask must both have width x height samples"));
    }
    let raw: Vec<u16> = disparity
        .iter()
        .zip(mask)
        .map(|(&d, &m)| {
            if m > 0.0 {
                (d * 256.0).round().clamp(1.0, u16::MAX as f32) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).expect("buffer size checked");
    buf.save(path).map_err(|e| StereoError::format(path, e.to_string()))
}

/// 8-bit RGB PNG as a `[1, 3, H, W]` tensor in `[0, 1]`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = match open(path)? {
        DynamicImage::ImageRgb8(buf) => buf,
        other => {
            return Err(StereoError::format(
                path,
                format!("expected an 8-bit RGB PNG, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0f32; 3 * h * w];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(data, &[1, 3, h, w])?)
}
