//! Loading stereo inputs and ground truth from PNG or PFM files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use anystereo::data::{from_pfm, standardize};
use anystereo::io::{crop, pad_to_16, read_kitti_disp_png, read_pfm, read_rgb_png, CropRecord};
use anystereo::Tensor;

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// A `[1, 3, H, W]` image from an 8-bit RGB PNG or a 3-channel PFM.
pub fn read_image(path: &Path) -> Result<Tensor> {
    if is_png(path) {
        return Ok(read_rgb_png(path)?);
    }
    let img = read_pfm(path)?;
    if img.channels != 3 {
        bail!("{}: expected a 3-channel image, found {}", path.display(), img.channels);
    }
    let planar = from_pfm(&img)?.to_vec();
    Ok(Tensor::new(planar, &[1, 3, img.height, img.width])?)
}

/// Reads both views, standardizes them with the left view's statistics and
/// pads them to multiples of 16.
pub fn read_pair(left: &Path, right: &Path) -> Result<(Tensor, Tensor, CropRecord)> {
    let l = read_image(left).with_context(|| format!("reading {}", left.display()))?;
    let r = read_image(right).with_context(|| format!("reading {}", right.display()))?;
    if l.shape() != r.shape() {
        bail!("left image is {:?} but right image is {:?}", l.shape(), r.shape());
    }
    let (mut lv, mut rv) = (l.to_vec(), r.to_vec());
    let plane = l.shape()[2] * l.shape()[3];
    standardize(&mut lv, &mut rv, plane);
    let (l, record) = pad_to_16(&Tensor::new(lv, l.shape())?)?;
    let (r, _) = pad_to_16(&Tensor::new(rv, r.shape())?)?;
    Ok((l, r, record))
}

/// Ground-truth disparity and validity mask as flat row-major buffers.
/// PNG files follow the KITTI 16-bit convention; PFM files mark every
/// finite, positive value as valid.
pub fn read_ground_truth(path: &Path) -> Result<(Vec<f32>, Vec<f32>, usize, usize)> {
    if is_png(path) {
        let k = read_kitti_disp_png(path)?;
        let (h, w) = (k.disparity.shape()[2], k.disparity.shape()[3]);
        return Ok((k.disparity.to_vec(), k.mask.to_vec(), h, w));
    }
    let img = read_pfm(path)?;
    if img.channels != 1 {
        bail!("{}: ground truth must have one channel", path.display());
    }
    let mask = img.data.iter().map(|&v| f32::from(v.is_finite() && v > 0.0)).collect();
    Ok((img.data, mask, img.height, img.width))
}

/// Crops a padded full-resolution map back to the input size.
pub fn unpad(map: &Tensor, record: CropRecord) -> Result<Tensor> {
    Ok(crop(map, record)?)
}
