use crate::autograd::Backward;
use crate::error::{mismatch, Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Invalid {
            op,
            msg: format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

fn want<T: Real>(t: &Tensor<T>, g: impl FnOnce() -> Vec<T>) -> Option<Vec<T>> {
    t.requires_grad().then(g)
}

struct AddOp;
impl<T: Real> Backward<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        vec![want(&inputs[0], || g.to_vec()), want(&inputs[1], || g.to_vec())]
    }
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], AddOp))
}

struct SubOp;
impl<T: Real> Backward<T> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        vec![
            want(&inputs[0], || g.to_vec()),
            want(&inputs[1], || g.iter().map(|v| -*v).collect()),
        ]
    }
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], SubOp))
}

struct MulOp;
impl<T: Real> Backward<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        vec![
            want(a, || g.iter().zip(b.data()).map(|(g, y)| *g * *y).collect()),
            want(b, || g.iter().zip(a.data()).map(|(g, x)| *g * *x).collect()),
        ]
    }
}

/// Elementwise product.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], MulOp))
}

struct ScaleOp<T>(T);
impl<T: Real> Backward<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, g: &[T], _: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|v| *v * self.0).collect())]
    }
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Tensor<T> {
    let data = a.data().iter().map(|x| *x * s).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], ScaleOp(s))
}

struct PassOp;
impl<T: Real> Backward<T> for PassOp {
    fn name(&self) -> &'static str {
        "pass"
    }
    fn backward(&self, g: &[T], _: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn add_scalar<T: Real>(a: &Tensor<T>, s: T) -> Tensor<T> {
    let data = a.data().iter().map(|x| *x + s).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], PassOp)
}

/// Shape change with the same element order.
pub fn reshape<T: Real>(a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    if n != a.numel() {
        return Err(TensorError::DataLength {
            op: "reshape",
            len: a.numel(),
            shape: shape.to_vec(),
        });
    }
    Ok(Tensor::from_op(a.to_vec(), shape.to_vec(), vec![a.clone()], PassOp))
}

struct SumOp {
    scale: f64,
}
impl<T: Real> Backward<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0] * T::lit(self.scale); inputs[0].numel()])]
    }
}

/// Sum of all elements as a scalar tensor.
pub fn sum<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let s = a.data().iter().copied().sum();
    Tensor::from_op(vec![s], Vec::new(), vec![a.clone()], SumOp { scale: 1.0 })
}

pub fn mean<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let n = a.numel().max(1);
    let s: T = a.data().iter().copied().sum();
    Tensor::from_op(
        vec![s / T::from_usize_lossy(n)],
        Vec::new(),
        vec![a.clone()],
        SumOp {
            scale: 1.0 / n as f64,
        },
    )
}

struct ReluOp;
impl<T: Real> Backward<T> for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        vec![Some(
            g.iter()
                .zip(x)
                .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                .collect(),
        )]
    }
}

pub fn relu<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|x| x.max(T::zero())).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], ReluOp)
}

/// Splits `shape` around `dim` into (outer, extent, inner).
fn split_dims(shape: &[usize], dim: usize) -> (usize, usize, usize) {
    let outer = shape[..dim].iter().product();
    let inner = shape[dim + 1..].iter().product();
    (outer, shape[dim], inner)
}

struct CatOp {
    dim: usize,
    extents: Vec<usize>,
}
impl<T: Real> Backward<T> for CatOp {
    fn name(&self) -> &'static str {
        "cat"
    }
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let total: usize = self.extents.iter().sum();
        let (outer, _, inner) = split_dims(inputs[0].shape(), self.dim);
        let mut start = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (t, &ext) in inputs.iter().zip(&self.extents) {
            if t.requires_grad() {
                let mut v = Vec::with_capacity(t.numel());
                for o in 0..outer {
                    let base = (o * total + start) * inner;
                    v.extend_from_slice(&g[base..base + ext * inner]);
                }
                out.push(Some(v));
            } else {
                out.push(None);
            }
            start += ext;
        }
        out
    }
}

/// Concatenates along `dim`; all other extents must agree.
pub fn cat<T: Real>(ts: &[Tensor<T>], dim: usize) -> Result<Tensor<T>> {
    let first = ts.first().ok_or_else(|| TensorError::Invalid {
        op: "cat",
        msg: "no inputs".into(),
    })?;
    if dim >= first.rank() {
        return Err(TensorError::Rank {
            op: "cat",
            expected: dim + 1,
            shape: first.shape().to_vec(),
        });
    }
    for t in ts {
        if t.rank() != first.rank() {
            return Err(TensorError::Rank {
                op: "cat",
                expected: first.rank(),
                shape: t.shape().to_vec(),
            });
        }
        for (d, (&x, &y)) in first.shape().iter().zip(t.shape()).enumerate() {
            if d != dim && x != y {
                return Err(mismatch("cat", "non-concatenated extent", x, y));
            }
        }
    }
    let extents: Vec<usize> = ts.iter().map(|t| t.shape()[dim]).collect();
    let (outer, _, inner) = split_dims(first.shape(), dim);
    let mut data = Vec::with_capacity(ts.iter().map(Tensor::numel).sum());
    for o in 0..outer {
        for (t, &ext) in ts.iter().zip(&extents) {
            let base = o * ext * inner;
            data.extend_from_slice(&t.data()[base..base + ext * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[dim] = extents.iter().sum();
    Ok(Tensor::from_op(data, shape, ts.to_vec(), CatOp { dim, extents }))
}

struct NarrowOp {
    dim: usize,
    start: usize,
    len: usize,
}
impl<T: Real> Backward<T> for NarrowOp {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (outer, ext, inner) = split_dims(inputs[0].shape(), self.dim);
        let mut out = vec![T::zero(); inputs[0].numel()];
        for o in 0..outer {
            let dst = (o * ext + self.start) * inner;
            let src = o * self.len * inner;
            out[dst..dst + self.len * inner].copy_from_slice(&g[src..src + self.len * inner]);
        }
        vec![Some(out)]
    }
}

/// Slice `start..start+len` of dimension `dim`.
pub fn narrow<T: Real>(a: &Tensor<T>, dim: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if dim >= a.rank() {
        return Err(TensorError::Rank {
            op: "narrow",
            expected: dim + 1,
            shape: a.shape().to_vec(),
        });
    }
    let (outer, ext, inner) = split_dims(a.shape(), dim);
    if start + len > ext {
        return Err(mismatch("narrow", "slice end", ext, start + len));
    }
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * ext + start) * inner;
        data.extend_from_slice(&a.data()[base..base + len * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[dim] = len;
    Ok(Tensor::from_op(data, shape, vec![a.clone()], NarrowOp { dim, start, len }))
}
