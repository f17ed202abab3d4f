use crate::autograd::Backward;
use crate::error::{check_rank, Result, TensorError};
use crate::exec::for_each_chunk2;
use crate::real::Real;
use crate::tensor::Tensor;

struct MaxPoolOp {
    /// Flat input offset of the winning element for every output element.
    argmax: Vec<u32>,
}

impl<T: Real> Backward<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "maxpool2"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let mut gin = vec![T::zero(); inputs[0].numel()];
        for (gv, &src) in g.iter().zip(&self.argmax) {
            gin[src as usize] += *gv;
        }
        vec![Some(gin)]
    }
}

/// 2×2 max pooling with stride 2 over `[B, C, H, W]`. Ties go to the first
/// element in row-major order.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    check_rank("maxpool2", x.shape(), 4)?;
    let &[b, c, h, w] = x.shape() else { unreachable!() };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::Invalid {
            op: "maxpool2",
            msg: format!("spatial extent {h}x{w} must be even"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = vec![T::zero(); b * c * ho * wo];
    let mut argmax = vec![0u32; out.len()];
    for_each_chunk2(&mut out, ho * wo, &mut argmax, ho * wo, |plane, o, am| {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xs[i] > xs[best] {
                        best = i;
                    }
                }
                o[oy * wo + ox] = xs[best];
                am[oy * wo + ox] = best as u32;
            }
        }
    });
    Ok(Tensor::from_op(out, vec![b, c, ho, wo], vec![x.clone()], MaxPoolOp { argmax }))
}
