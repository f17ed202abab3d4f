use crate::autograd::Backward;
use crate::error::{check_rank, Result, TensorError};
use crate::exec::for_each_chunk;
use crate::real::Real;
use crate::tensor::Tensor;

/// Align-corners linear interpolation taps: output `o` reads
/// `(1 - t) * in[i0] + t * in[i1]`.
#[derive(Debug, Clone)]
pub struct LinearTaps<T> {
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
    pub t: Vec<T>,
}

impl<T: Real> LinearTaps<T> {
    pub fn align_corners(n_in: usize, n_out: usize) -> Self {
        let mut taps = Self {
            i0: Vec::with_capacity(n_out),
            i1: Vec::with_capacity(n_out),
            t: Vec::with_capacity(n_out),
        };
        let ratio = if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        };
        for o in 0..n_out {
            let pos = o as f64 * ratio;
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            taps.i0.push(i0);
            taps.i1.push(i1);
            taps.t.push(T::lit(pos - i0 as f64));
        }
        taps
    }
}

struct UpsampleOp<T> {
    rows: LinearTaps<T>,
    cols: LinearTaps<T>,
}

impl<T: Real> Backward<T> for UpsampleOp<T> {
    fn name(&self) -> &'static str {
        "upsample_bilinear"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let &[_, _, h, w] = inputs[0].shape() else { unreachable!() };
        let (ho, wo) = (self.rows.t.len(), self.cols.t.len());
        let mut gin = vec![T::zero(); inputs[0].numel()];
        for_each_chunk(&mut gin, h * w, |plane, gp| {
            let gop = &g[plane * ho * wo..][..ho * wo];
            for y in 0..ho {
                let (r0, r1, ty) = (self.rows.i0[y], self.rows.i1[y], self.rows.t[y]);
                for x in 0..wo {
                    let (c0, c1, tx) = (self.cols.i0[x], self.cols.i1[x], self.cols.t[x]);
                    let v = gop[y * wo + x];
                    let top = v * (T::one() - ty);
                    let bot = v * ty;
                    gp[r0 * w + c0] += top * (T::one() - tx);
                    gp[r0 * w + c1] += top * tx;
                    gp[r1 * w + c0] += bot * (T::one() - tx);
                    gp[r1 * w + c1] += bot * tx;
                }
            }
        });
        vec![Some(gin)]
    }
}

/// Bilinear resize of `[B, C, H, W]` to `[B, C, out_h, out_w]` with
/// corner pixels aligned.
pub fn upsample_bilinear_to<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    check_rank("upsample_bilinear", x.shape(), 4)?;
    let &[b, c, h, w] = x.shape() else { unreachable!() };
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(TensorError::Invalid {
            op: "upsample_bilinear",
            msg: "empty spatial extent".into(),
        });
    }
    let rows = LinearTaps::<T>::align_corners(h, out_h);
    let cols = LinearTaps::<T>::align_corners(w, out_w);
    let xs = x.data();
    let mut out = vec![T::zero(); b * c * out_h * out_w];
    for_each_chunk(&mut out, out_h * out_w, |plane, o| {
        let xp = &xs[plane * h * w..][..h * w];
        for y in 0..out_h {
            let (r0, r1, ty) = (rows.i0[y], rows.i1[y], rows.t[y]);
            for xo in 0..out_w {
                let (c0, c1, tx) = (cols.i0[xo], cols.i1[xo], cols.t[xo]);
                let top = xp[r0 * w + c0] * (T::one() - tx) + xp[r0 * w + c1] * tx;
                let bot = xp[r1 * w + c0] * (T::one() - tx) + xp[r1 * w + c1] * tx;
                o[y * out_w + xo] = top * (T::one() - ty) + bot * ty;
            }
        }
    });
    Ok(Tensor::from_op(
        out,
        vec![b, c, out_h, out_w],
        vec![x.clone()],
        UpsampleOp { rows, cols },
    ))
}

/// Integer-factor bilinear upsample (align corners).
pub fn upsample_bilinear<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_rank("upsample_bilinear", x.shape(), 4)?;
    if factor == 0 {
        return Err(TensorError::Invalid {
            op: "upsample_bilinear",
            msg: "factor must be positive".into(),
        });
    }
    upsample_bilinear_to(x, x.shape()[2] * factor, x.shape()[3] * factor)
}
