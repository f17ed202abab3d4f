use anystereo_tensor::{Real, Tensor};

use crate::error::{Result, StereoError};

/// Original spatial size of a padded tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
}

/// Zero-pads a `[B, C, H, W]` tensor on the right and bottom so both
/// spatial extents are multiples of 16.
pub fn pad_to_16<T: Real>(t: &Tensor<T>) -> Result<(Tensor<T>, CropRecord)> {
    let &[b, c, h, w] = t.shape() else {
        return Err(StereoError::pre(format!("pad_to_16: expected [B, C, H, W], got {:?}", t.shape())));
    };
    let record = CropRecord { height: h, width: w };
    let (ph, pw) = (h.div_ceil(16) * 16, w.div_ceil(16) * 16);
    if (ph, pw) == (h, w) {
        return Ok((t.clone(), record));
    }
    let src = t.data();
    let mut out = vec![T::zero(); b * c * ph * pw];
    for plane in 0..b * c {
        for i in 0..h {
            let s = (plane * h + i) * w;
            let d = (plane * ph + i) * pw;
            out[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok((Tensor::new(out, &[b, c, ph, pw])?, record))
}

/// Top-left `record.height × record.width` window of a `[B, C, H, W]` tensor.
pub fn crop<T: Real>(t: &Tensor<T>, record: CropRecord) -> Result<Tensor<T>> {
    let &[b, c, h, w] = t.shape() else {
        return Err(StereoError::pre(format!("crop: expected [B, C, H, W], got {:?}", t.shape())));
    };
    if record.height > h || record.width > w {
        return Err(StereoError::pre(format!(
            "crop: {}x{} window exceeds {h}x{w}",
            record.height, record.width
        )));
    }
    let (oh, ow) = (record.height, record.width);
    let src = t.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        for i in 0..oh {
            let s = (plane * h + i) * w;
            out.extend_from_slice(&src[s..s + ow]);
        }
    }
    Ok(Tensor::new(out, &[b, c, oh, ow])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_height_pads_to_384() {
        let t = Tensor::<f32>::zeros(&[1, 1, 375, 20]);
        let (p, rec) = pad_to_16(&t).unwrap();
        assert_eq!(p.shape(), &[1, 1, 384, 32]);
        assert_eq!(rec, CropRecord { height: 375, width: 20 });
    }

    #[test]
    fn divisible_input_is_unchanged() {
        let t = Tensor::from_fn(&[1, 2, 16, 32], |i| i as f32);
        let (p, _) = pad_to_16(&t).unwrap();
        assert_eq!(p.data(), t.data());
    }

    #[test]
    fn crop_undoes_pad() {
        let t = Tensor::from_fn(&[2, 3, 5, 7], |i| i as f32 * 0.5);
        let (p, rec) = pad_to_16(&t).unwrap();
        assert_eq!(p.at(&[1, 2, 4, 6]), t.at(&[1, 2, 4, 6]));
        assert_eq!(p.at(&[1, 2, 5, 6]), 0.0);
        assert_eq!(crop(&p, rec).unwrap().data(), t.data());
        assert!(crop(&t, CropRecord { height: 6, width: 1 }).is_err());
    }
}
