//! Joint multi-stage loss and the 3-pixel error metric.

use anystereo_tensor::{Backward, Real, Tensor};

use crate::error::{Result, StereoError};

/// Per-stage loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights(pub [f64; 4]);

impl Default for LossWeights {
    fn default() -> Self {
        Self([0.25, 0.5, 1.0, 1.0])
    }
}

fn check_same(op: &str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(StereoError::pre(format!(
            "{op}: shape {:?} does not match {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn valid_count<T: Real>(mask: &[T]) -> Result<usize> {
    let n = mask.iter().filter(|&&m| m > T::zero()).count();
    if n == 0 {
        return Err(StereoError::EmptyMask);
    }
    Ok(n)
}

struct SmoothL1Op<T> {
    /// `d loss / d pred` per element, already divided by the pixel count.
    slope: Vec<T>,
}

impl<T: Real> Backward<T> for SmoothL1Op<T> {
    fn name(&self) -> &'static str {
        "smooth_l1"
    }

    fn backward(&self, g: &[T], _inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        vec![Some(self.slope.iter().map(|&s| s * g[0]).collect())]
    }
}

/// Mean smooth-L1 (quadratic for `|e| < 1`) of `pred - gt` over pixels where
/// `mask > 0`. Only `pred` receives gradients.
pub fn masked_smooth_l1<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("smooth_l1", pred, gt)?;
    check_same("smooth_l1", pred, mask)?;
    let n = T::from_usize_lossy(valid_count(mask.data())?);
    let half = T::lit(0.5);
    let mut total = T::zero();
    let mut slope = vec![T::zero(); pred.numel()];
    for (i, s) in slope.iter_mut().enumerate() {
        if mask.data()[i] <= T::zero() {
            continue;
        }
        let e = pred.data()[i] - gt.data()[i];
        if e.abs() < T::one() {
            total += half * e * e;
            *s = e / n;
        } else {
            total += e.abs() - half;
            *s = e.signum() / n;
        }
    }
    Ok(Tensor::from_op(vec![total / n], vec![], vec![pred.clone()], SmoothL1Op { slope }))
}

/// `Σ_s λ_s · smooth_l1(outputs[s], gt)` over the valid pixels.
pub fn multi_stage_loss<T: Real>(
    outputs: &[Tensor<T>],
    gt: &Tensor<T>,
    mask: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Tensor<T>> {
    if outputs.len() != 4 {
        return Err(StereoError::pre(format!("expected 4 stage outputs, got {}", outputs.len())));
    }
    let mut total: Option<Tensor<T>> = None;
    for (out, &w) in outputs.iter().zip(&weights.0) {
        let term = anystereo_tensor::ops::scale(&masked_smooth_l1(out, gt, mask)?, T::lit(w));
        total = Some(match total {
            None => term,
            Some(t) => anystereo_tensor::ops::add(&t, &term)?,
        });
    }
    Ok(total.expect("four terms"))
}

/// Fraction of valid pixels whose prediction is off by more than 3 pixels.
pub fn three_pixel_error(pred: &[f32], gt: &[f32], mask: &[f32]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(StereoError::pre(format!(
            "three_pixel_error: lengths {} / {} / {} differ",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let n = valid_count(mask)?;
    let bad = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|((p, g), m)| **m > 0.0 && (**p - **g).abs() > 3.0)
        .count();
    Ok(bad as f64 / n as f64)
}
