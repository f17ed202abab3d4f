use crate::autograd::Backward;
use crate::error::{mismatch, Result, TensorError};
use crate::exec::{for_each_chunk, map_range};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance, the form folded into running estimates.
    pub var: Vec<T>,
}

fn layout<T: Real>(op: &'static str, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: x.shape().to_vec(),
        });
    }
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let inner: usize = x.shape()[2..].iter().product();
    for p in [gamma, beta] {
        if p.numel() != c {
            return Err(mismatch(op, "channels", c, p.numel()));
        }
    }
    Ok((b, c, inner))
}

/// Channel `c` values of a `[B, C, ...]` buffer, batch by batch.
fn channel_planes<T: Real>(x: &[T], b: usize, c: usize, inner: usize, ch: usize) -> impl Iterator<Item = &[T]> {
    (0..b).map(move |bi| &x[(bi * c + ch) * inner..][..inner])
}

struct BnOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Batch statistics feed back into the gradient only in training mode.
    batch: bool,
}

impl<T: Real> Backward<T> for BnOp<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (x, gamma, beta) = (&inputs[0], &inputs[1], &inputs[2]);
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let inner = x.numel() / (b * c).max(1);
        let n = T::from_usize_lossy(b * inner);
        let sums: Vec<(T, T)> = map_range(c, |ch| {
            let mut s = T::zero();
            let mut sx = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * inner;
                for (gv, xh) in g[off..off + inner].iter().zip(&self.xhat[off..off + inner]) {
                    s += *gv;
                    sx += *gv * *xh;
                }
            }
            (s, sx)
        });
        let gx = x.requires_grad().then(|| {
            let gm = gamma.data();
            let mut gx = vec![T::zero(); x.numel()];
            for_each_chunk(&mut gx, inner, |idx, out| {
                let ch = idx % c;
                let off = idx * inner;
                let scale = gm[ch] * self.inv_std[ch];
                let gs = &g[off..off + inner];
                if self.batch {
                    let (s, sx) = sums[ch];
                    let xh = &self.xhat[off..off + inner];
                    for ((o, gv), xv) in out.iter_mut().zip(gs).zip(xh) {
                        *o = scale * (*gv - s / n - *xv * sx / n);
                    }
                } else {
                    for (o, gv) in out.iter_mut().zip(gs) {
                        *o = scale * *gv;
                    }
                }
            });
            gx
        });
        let ggamma = gamma.requires_grad().then(|| sums.iter().map(|s| s.1).collect());
        let gbeta = beta.requires_grad().then(|| sums.iter().map(|s| s.0).collect());
        vec![gx, ggamma, gbeta]
    }
}

fn apply<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, mean: &[T], inv_std: &[T], batch: bool) -> Tensor<T> {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let inner = x.numel() / (b * c).max(1);
    let xs = x.data();
    let mut xhat = vec![T::zero(); xs.len()];
    for_each_chunk(&mut xhat, inner, |idx, out| {
        let ch = idx % c;
        let src = &xs[idx * inner..][..inner];
        for (o, v) in out.iter_mut().zip(src) {
            *o = (*v - mean[ch]) * inv_std[ch];
        }
    });
    let (gm, bt) = (gamma.data(), beta.data());
    let mut y = vec![T::zero(); xs.len()];
    for_each_chunk(&mut y, inner, |idx, out| {
        let ch = idx % c;
        for (o, v) in out.iter_mut().zip(&xhat[idx * inner..][..inner]) {
            *o = gm[ch] * *v + bt[ch];
        }
    });
    Tensor::from_op(
        y,
        x.shape().to_vec(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        BnOp {
            xhat,
            inv_std: inv_std.to_vec(),
            batch,
        },
    )
}

/// Normalizes each channel with the statistics of this batch.
pub fn batch_norm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BatchStats<T>)> {
    let (b, c, inner) = layout("batch_norm", x, gamma, beta)?;
    let n = b * inner;
    if n == 0 {
        return Err(TensorError::Invalid {
            op: "batch_norm",
            msg: "empty batch".into(),
        });
    }
    let xs = x.data();
    let nf = T::from_usize_lossy(n);
    let stats: Vec<(T, T)> = map_range(c, |ch| {
        let sum: T = channel_planes(xs, b, c, inner, ch).flatten().copied().sum();
        let mean = sum / nf;
        let ss: T = channel_planes(xs, b, c, inner, ch)
            .flatten()
            .map(|v| (*v - mean) * (*v - mean))
            .sum();
        (mean, ss)
    });
    let mean: Vec<T> = stats.iter().map(|s| s.0).collect();
    let inv_std: Vec<T> = stats.iter().map(|s| T::one() / (s.1 / nf + eps).sqrt()).collect();
    let unbiased = if n > 1 { T::from_usize_lossy(n - 1) } else { T::one() };
    let var = stats.iter().map(|s| s.1 / unbiased).collect();
    let y = apply(x, gamma, beta, &mean, &inv_std, true);
    Ok((y, BatchStats { mean, var }))
}

/// Normalizes with fixed (running) statistics.
pub fn batch_norm_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let (_, c, _) = layout("batch_norm", x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(mismatch("batch_norm", "running statistics", c, mean.len().min(var.len())));
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    Ok(apply(x, gamma, beta, mean, &inv_std, false))
}
