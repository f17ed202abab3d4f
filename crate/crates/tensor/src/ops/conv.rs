//! Direct 2-D / 3-D convolution with "same" zero padding (`kernel / 2`).
//!
//! Inner loops run along image rows so they vectorize; work is split over
//! (batch, channel) planes for the forward and input-gradient passes and
//! over output channels for the weight gradient.

use crate::autograd::Backward;
use crate::error::{check_rank, mismatch, Result, TensorError};
use crate::exec::for_each_chunk;
use crate::real::Real;
use crate::tensor::Tensor;

/// Output extent for a padded convolution: `ceil(len / stride)`.
pub fn conv_output_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Output positions `lo..hi` whose input index `o * stride + tap - pad`
/// falls inside `0..len_in`.
#[inline]
fn tap_range(tap: usize, pad: usize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    let off = tap as isize - pad as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let last = len_in as isize - 1 - off;
    let hi = if last < 0 {
        0
    } else {
        (last as usize / stride + 1).min(len_out)
    };
    (lo.min(hi), hi)
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], src: &[T], a: T) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn check_kernel(op: &'static str, k: usize, shape: &[usize]) -> Result<()> {
    if k.is_multiple_of(2) || shape[2..].iter().any(|&e| e != k) {
        return Err(TensorError::Invalid {
            op,
            msg: format!("kernel must be cubic/square with odd extent, got {:?}", &shape[2..]),
        });
    }
    Ok(())
}

struct Conv2dOp {
    stride: usize,
}

/// `input`: `[B, Cin, H, W]`, `weight`: `[Cout, Cin, k, k]`.
/// Output `[B, Cout, ceil(H/stride), ceil(W/stride)]`.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    check_rank("conv2d", input.shape(), 4)?;
    check_rank("conv2d weight", weight.shape(), 4)?;
    let &[b, cin, h, w] = input.shape() else { unreachable!() };
    let &[cout, wcin, k, _] = weight.shape() else { unreachable!() };
    if wcin != cin {
        return Err(mismatch("conv2d", "input channels", wcin, cin));
    }
    check_kernel("conv2d", k, weight.shape())?;
    if stride == 0 {
        return Err(TensorError::Invalid {
            op: "conv2d",
            msg: "stride must be positive".into(),
        });
    }
    let pad = k / 2;
    let (ho, wo) = (conv_output_len(h, stride), conv_output_len(w, stride));
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); b * cout * ho * wo];
    for_each_chunk(&mut out, ho * wo, |idx, o| {
        let (bi, co) = (idx / cout, idx % cout);
        for ci in 0..cin {
            let xp = &x[(bi * cin + ci) * h * w..][..h * w];
            let wk = &wt[(co * cin + ci) * k * k..][..k * k];
            for oy in 0..ho {
                let orow = &mut o[oy * wo..][..wo];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xp[iy as usize * w..][..w];
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (lo, hi) = tap_range(kx, pad, stride, w, wo);
                        if stride == 1 {
                            let src = lo + kx - pad;
                            axpy(&mut orow[lo..hi], &xrow[src..src + hi - lo], wv);
                        } else {
                            for ox in lo..hi {
                                orow[ox] += wv * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_op(
        out,
        vec![b, cout, ho, wo],
        vec![input.clone(), weight.clone()],
        Conv2dOp { stride },
    ))
}

impl<T: Real> Backward<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (input, weight) = (&inputs[0], &inputs[1]);
        let &[b, cin, h, w] = input.shape() else { unreachable!() };
        let &[cout, _, k, _] = weight.shape() else { unreachable!() };
        let s = self.stride;
        let pad = k / 2;
        let (ho, wo) = (conv_output_len(h, s), conv_output_len(w, s));
        let x = input.data();
        let wt = weight.data();

        let gin = input.requires_grad().then(|| {
            let mut gin = vec![T::zero(); x.len()];
            for_each_chunk(&mut gin, h * w, |idx, gp| {
                let (bi, ci) = (idx / cin, idx % cin);
                for co in 0..cout {
                    let gop = &g[(bi * cout + co) * ho * wo..][..ho * wo];
                    let wk = &wt[(co * cin + ci) * k * k..][..k * k];
                    for oy in 0..ho {
                        let grow = &gop[oy * wo..][..wo];
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let irow = &mut gp[iy as usize * w..][..w];
                            for kx in 0..k {
                                let wv = wk[ky * k + kx];
                                let (lo, hi) = tap_range(kx, pad, s, w, wo);
                                if s == 1 {
                                    let dst = lo + kx - pad;
                                    axpy(&mut irow[dst..dst + hi - lo], &grow[lo..hi], wv);
                                } else {
                                    for ox in lo..hi {
                                        irow[ox * s + kx - pad] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            gin
        });

        let gw = weight.requires_grad().then(|| {
            let mut gw = vec![T::zero(); wt.len()];
            for_each_chunk(&mut gw, cin * k * k, |co, gwc| {
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (lo, hi) = tap_range(kx, pad, s, w, wo);
                            let mut acc = T::zero();
                            for bi in 0..b {
                                let xp = &x[(bi * cin + ci) * h * w..][..h * w];
                                let gop = &g[(bi * cout + co) * ho * wo..][..ho * wo];
                                for oy in 0..ho {
                                    let iy = (oy * s + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let xrow = &xp[iy as usize * w..][..w];
                                    let grow = &gop[oy * wo..][..wo];
                                    if s == 1 {
                                        let src = lo + kx - pad;
                                        acc += dot(&grow[lo..hi], &xrow[src..src + hi - lo]);
                                    } else {
                                        for ox in lo..hi {
                                            acc += grow[ox] * xrow[ox * s + kx - pad];
                                        }
                                    }
                                }
                            }
                            gwc[(ci * k + ky) * k + kx] = acc;
                        }
                    }
                }
            });
            gw
        });
        vec![gin, gw]
    }
}

struct Conv3dOp;

/// `input`: `[B, Cin, D, H, W]`, `weight`: `[Cout, Cin, k, k, k]`, stride 1.
pub fn conv3d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    check_rank("conv3d", input.shape(), 5)?;
    check_rank("conv3d weight", weight.shape(), 5)?;
    let &[b, cin, d, h, w] = input.shape() else { unreachable!() };
    let &[cout, wcin, k, _, _] = weight.shape() else { unreachable!() };
    if wcin != cin {
        return Err(mismatch("conv3d", "input channels", wcin, cin));
    }
    check_kernel("conv3d", k, weight.shape())?;
    let pad = k / 2;
    let plane = h * w;
    let vol = d * plane;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); b * cout * vol];
    for_each_chunk(&mut out, vol, |idx, o| {
        let (bi, co) = (idx / cout, idx % cout);
        for ci in 0..cin {
            let xv = &x[(bi * cin + ci) * vol..][..vol];
            let wk = &wt[(co * cin + ci) * k * k * k..][..k * k * k];
            for od in 0..d {
                for kd in 0..k {
                    let id = (od + kd) as isize - pad as isize;
                    if id < 0 || id >= d as isize {
                        continue;
                    }
                    let xp = &xv[id as usize * plane..][..plane];
                    for oy in 0..h {
                        let orow = &mut o[od * plane + oy * w..][..w];
                        for ky in 0..k {
                            let iy = (oy + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xp[iy as usize * w..][..w];
                            for kx in 0..k {
                                let wv = wk[(kd * k + ky) * k + kx];
                                let (lo, hi) = tap_range(kx, pad, 1, w, w);
                                let src = lo + kx - pad;
                                axpy(&mut orow[lo..hi], &xrow[src..src + hi - lo], wv);
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_op(
        out,
        vec![b, cout, d, h, w],
        vec![input.clone(), weight.clone()],
        Conv3dOp,
    ))
}

impl<T: Real> Backward<T> for Conv3dOp {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (input, weight) = (&inputs[0], &inputs[1]);
        let &[b, cin, d, h, w] = input.shape() else { unreachable!() };
        let &[cout, _, k, _, _] = weight.shape() else { unreachable!() };
        let pad = k / 2;
        let plane = h * w;
        let vol = d * plane;
        let x = input.data();
        let wt = weight.data();

        let gin = input.requires_grad().then(|| {
            let mut gin = vec![T::zero(); x.len()];
            for_each_chunk(&mut gin, vol, |idx, gv| {
                let (bi, ci) = (idx / cin, idx % cin);
                for co in 0..cout {
                    let gov = &g[(bi * cout + co) * vol..][..vol];
                    let wk = &wt[(co * cin + ci) * k * k * k..][..k * k * k];
                    for od in 0..d {
                        for kd in 0..k {
                            let id = (od + kd) as isize - pad as isize;
                            if id < 0 || id >= d as isize {
                                continue;
                            }
                            let id = id as usize;
                            for oy in 0..h {
                                let grow = &gov[od * plane + oy * w..][..w];
                                for ky in 0..k {
                                    let iy = (oy + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let irow = &mut gv[id * plane + iy as usize * w..][..w];
                                    for kx in 0..k {
                                        let wv = wk[(kd * k + ky) * k + kx];
                                        let (lo, hi) = tap_range(kx, pad, 1, w, w);
                                        let dst = lo + kx - pad;
                                        axpy(&mut irow[dst..dst + hi - lo], &grow[lo..hi], wv);
                                    }
                                }
                            }
                        }
                    }
                }
            });
            gin
        });

        let gw = weight.requires_grad().then(|| {
            let mut gw = vec![T::zero(); wt.len()];
            for_each_chunk(&mut gw, cin * k * k * k, |co, gwc| {
                for ci in 0..cin {
                    for kd in 0..k {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (lo, hi) = tap_range(kx, pad, 1, w, w);
                                let src = lo + kx - pad;
                                let mut acc = T::zero();
                                for bi in 0..b {
                                    let xv = &x[(bi * cin + ci) * vol..][..vol];
                                    let gov = &g[(bi * cout + co) * vol..][..vol];
                                    for od in 0..d {
                                        let id = (od + kd) as isize - pad as isize;
                                        if id < 0 || id >= d as isize {
                                            continue;
                                        }
                                        for oy in 0..h {
                                            let iy = (oy + ky) as isize - pad as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            let xrow = &xv[id as usize * plane + iy as usize * w..][..w];
                                            let grow = &gov[od * plane + oy * w..][..w];
                                            acc += dot(&grow[lo..hi], &xrow[src..src + hi - lo]);
                                        }
                                    }
                                }
                                gwc[((ci * k + kd) * k + ky) * k + kx] = acc;
                            }
                        }
                    }
                }
            });
            gw
        });
        vec![gin, gw]
    }
}
