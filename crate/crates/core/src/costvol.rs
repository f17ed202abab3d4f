//! L1 cost volumes and disparity-guided warping of right-image features.
//!
//! Disparity `d` at left pixel `(i, j)` corresponds to right pixel
//! `(i, j - d)`. Right features outside the row are treated as zero.

use anystereo_tensor::exec::for_each_chunk;
use anystereo_tensor::{Backward, Real, Tensor};

use crate::error::{Result, StereoError};

pub const RESIDUAL_DEPTH: usize = 5;
pub const RESIDUAL_OFFSET: i32 = -2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Full,
    Residual,
}

/// Matching costs `[B, D, H, W]`; candidate `k` stands for disparity
/// `k + k_offset`.
#[derive(Debug, Clone)]
pub struct CostVolume<T: Real = f32> {
    pub values: Tensor<T>,
    pub kind: VolumeKind,
    pub k_offset: i32,
}

impl<T: Real> CostVolume<T> {
    pub fn depth(&self) -> usize {
        self.values.shape()[1]
    }

    /// Disparity value represented by each candidate.
    pub fn candidates(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.depth() as i32).map(move |k| k + self.k_offset)
    }
}

fn dims4(op: &str, t: &Tensor<impl Real>) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(StereoError::pre(format!(
            "{op}: expected a [B, C, H, W] tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

fn same_shape(op: &str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<[usize; 4]> {
    let da = dims4(op, a)?;
    let db = dims4(op, b)?;
    if da != db {
        return Err(StereoError::pre(format!(
            "{op}: left shape {da:?} does not match right shape {db:?}"
        )));
    }
    Ok(da)
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Column range `j` for which `j - shift` lies inside `[0, w)`.
#[inline]
fn valid_cols(shift: isize, w: usize) -> (usize, usize) {
    let lo = shift.clamp(0, w as isize) as usize;
    let hi = (w as isize + shift).clamp(0, w as isize) as usize;
    (lo, hi)
}

/// `out[b, k, i, j] = Σ_c |left[b, c, i, j] - right[b, c, i, j - shifts[k]]|`.
struct ShiftedL1 {
    shifts: Vec<isize>,
}

impl ShiftedL1 {
    fn forward<T: Real>(&self, l: &[T], r: &[T], [b, c, h, w]: [usize; 4]) -> Vec<T> {
        let d = self.shifts.len();
        let hw = h * w;
        let mut out = vec![T::zero(); b * d * hw];
        for_each_chunk(&mut out, hw, |plane, o| {
            let (bi, k) = (plane / d, plane % d);
            let s = self.shifts[k];
            let (lo, hi) = valid_cols(s, w);
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for i in 0..h {
                    let lrow = &l[base + i * w..base + (i + 1) * w];
                    let rrow = &r[base + i * w..base + (i + 1) * w];
                    let orow = &mut o[i * w..(i + 1) * w];
                    for j in 0..lo {
                        orow[j] += lrow[j].abs();
                    }
                    for j in lo..hi {
                        orow[j] += (lrow[j] - rrow[(j as isize - s) as usize]).abs();
                    }
                    for j in hi..w {
                        orow[j] += lrow[j].abs();
                    }
                }
            }
        });
        out
    }
}

impl<T: Real> Backward<T> for ShiftedL1 {
    fn name(&self) -> &'static str {
        "cost_volume"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let &[b, c, h, w] = inputs[0].shape() else { unreachable!() };
        let (l, r) = (inputs[0].data(), inputs[1].data());
        let d = self.shifts.len();
        let hw = h * w;
        let grad_for = |left_side: bool| {
            let mut gin = vec![T::zero(); b * c * hw];
            for_each_chunk(&mut gin, hw, |plane, gp| {
                let bi = plane / c;
                let base = plane * hw;
                for (k, &s) in self.shifts.iter().enumerate() {
                    let gbase = (bi * d + k) * hw;
                    let (lo, hi) = valid_cols(s, w);
                    for i in 0..h {
                        let lrow = &l[base + i * w..base + (i + 1) * w];
                        let rrow = &r[base + i * w..base + (i + 1) * w];
                        let grow = &g[gbase + i * w..gbase + (i + 1) * w];
                        let prow = &mut gp[i * w..(i + 1) * w];
                        if left_side {
                            for j in (0..lo).chain(hi..w) {
                                prow[j] += grow[j] * sign(lrow[j]);
                            }
                        }
                        for j in lo..hi {
                            let x = (j as isize - s) as usize;
                            let e = grow[j] * sign(lrow[j] - rrow[x]);
                            if left_side {
                                prow[j] += e;
                            } else {
                                prow[x] -= e;
                            }
                        }
                    }
                }
            });
            gin
        };
        vec![
            inputs[0].requires_grad().then(|| grad_for(true)),
            inputs[1].requires_grad().then(|| grad_for(false)),
        ]
    }
}

fn shifted_l1<T: Real>(left: &Tensor<T>, right: &Tensor<T>, shifts: Vec<isize>, op: &str) -> Result<Tensor<T>> {
    let dims = same_shape(op, left, right)?;
    let [b, _, h, w] = dims;
    let vol = ShiftedL1 { shifts };
    let out = vol.forward(left.data(), right.data(), dims);
    let d = vol.shifts.len();
    Ok(Tensor::from_op(out, vec![b, d, h, w], vec![left.clone(), right.clone()], vol))
}

/// Full-range volume over disparities `0..depth`.
pub fn build_full<T: Real>(left: &Tensor<T>, right: &Tensor<T>, depth: usize) -> Result<CostVolume<T>> {
    if depth == 0 {
        return Err(StereoError::pre("build_full: depth must be at least 1"));
    }
    let shifts = (0..depth as isize).collect();
    Ok(CostVolume {
        values: shifted_l1(left, right, shifts, "build_full")?,
        kind: VolumeKind::Full,
        k_offset: 0,
    })
}

/// Residual volume over offsets `-2..=2` against already-warped right
/// features.
pub fn build_residual<T: Real>(left: &Tensor<T>, warped_right: &Tensor<T>) -> Result<CostVolume<T>> {
    let shifts = (0..RESIDUAL_DEPTH as isize)
        .map(|k| k + RESIDUAL_OFFSET as isize)
        .collect();
    Ok(CostVolume {
        values: shifted_l1(left, warped_right, shifts, "build_residual")?,
        kind: VolumeKind::Residual,
        k_offset: RESIDUAL_OFFSET,
    })
}

struct WarpOp;

/// Sampling position `x = j - d` split into the left tap and its weight on
/// the right tap.
#[inline]
fn taps<T: Real>(j: usize, d: T) -> (i64, T) {
    let x = T::from_usize_lossy(j) - d;
    let x0 = x.floor();
    (x0.to_i64().unwrap_or(i64::MIN / 2), x - x0)
}

#[inline]
fn fetch<T: Real>(row: &[T], x: i64) -> T {
    if x >= 0 && (x as usize) < row.len() {
        row[x as usize]
    } else {
        T::zero()
    }
}

impl<T: Real> Backward<T> for WarpOp {
    fn name(&self) -> &'static str {
        "warp_right"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (f, disp) = (&inputs[0], &inputs[1]);
        let &[b, c, h, w] = f.shape() else { unreachable!() };
        let (fd, dd) = (f.data(), disp.data());
        let hw = h * w;

        let gf = f.requires_grad().then(|| {
            let mut gf = vec![T::zero(); b * c * hw];
            for_each_chunk(&mut gf, hw, |plane, gp| {
                let bi = plane / c;
                for i in 0..h {
                    let grow = &g[plane * hw + i * w..plane * hw + (i + 1) * w];
                    let drow = &dd[bi * hw + i * w..bi * hw + (i + 1) * w];
                    let prow = &mut gp[i * w..(i + 1) * w];
                    for j in 0..w {
                        let (x0, t) = taps(j, drow[j]);
                        for (x, wt) in [(x0, T::one() - t), (x0 + 1, t)] {
                            if x >= 0 && (x as usize) < w {
                                prow[x as usize] += wt * grow[j];
                            }
                        }
                    }
                }
            });
            gf
        });

        let gd = disp.requires_grad().then(|| {
            let mut gd = vec![T::zero(); b * hw];
            for_each_chunk(&mut gd, hw, |bi, gp| {
                for ch in 0..c {
                    let plane = bi * c + ch;
                    for i in 0..h {
                        let frow = &fd[plane * hw + i * w..plane * hw + (i + 1) * w];
                        let grow = &g[plane * hw + i * w..plane * hw + (i + 1) * w];
                        let drow = &dd[bi * hw + i * w..bi * hw + (i + 1) * w];
                        for j in 0..w {
                            let (x0, _) = taps(j, drow[j]);
                            let slope = fetch(frow, x0 + 1) - fetch(frow, x0);
                            gp[i * w + j] -= grow[j] * slope;
                        }
                    }
                }
            });
            gd
        });
        vec![gf, gd]
    }
}

/// Samples `features[b, c, i, j - disparity[b, 0, i, j]]` with linear
/// interpolation along the row and zero outside it.
pub fn warp_right<T: Real>(features: &Tensor<T>, disparity: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = dims4("warp_right", features)?;
    let dshape = disparity.shape();
    if dshape != [b, 1, h, w] {
        return Err(StereoError::pre(format!(
            "warp_right: disparity shape {dshape:?} must be [{b}, 1, {h}, {w}]"
        )));
    }
    let (fd, dd) = (features.data(), disparity.data());
    let hw = h * w;
    let mut out = vec![T::zero(); b * c * hw];
    for_each_chunk(&mut out, hw, |plane, o| {
        let bi = plane / c;
        for i in 0..h {
            let frow = &fd[plane * hw + i * w..plane * hw + (i + 1) * w];
            let drow = &dd[bi * hw + i * w..bi * hw + (i + 1) * w];
            for j in 0..w {
                let (x0, t) = taps(j, drow[j]);
                o[i * w + j] = (T::one() - t) * fetch(frow, x0) + t * fetch(frow, x0 + 1);
            }
        }
    });
    Ok(Tensor::from_op(
        out,
        features.shape().to_vec(),
        vec![features.clone(), disparity.clone()],
        WarpOp,
    ))
}
