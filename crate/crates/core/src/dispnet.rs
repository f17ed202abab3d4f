//! Cost regularization and soft-argmin disparity regression.

use anystereo_tensor::exec::for_each_chunk;
use anystereo_tensor::nn::{Conv, ConvSpec, Module, Param};
use anystereo_tensor::{ops, Backward, Real, Tensor};
use rand::Rng;

use crate::costvol::{CostVolume, RESIDUAL_DEPTH};
use crate::counters::ForwardCtx;
use crate::error::{Result, StereoError};

/// Per-pixel disparity `[B, 1, h, w]` in pixel units of its own scale.
#[derive(Debug, Clone)]
pub struct DisparityMap<T: Real = f32> {
    pub values: Tensor<T>,
    /// Downsampling factor relative to the input image (16, 8, 4 or 1).
    pub scale: usize,
    pub stage: u8,
}

impl<T: Real> DisparityMap<T> {
    pub fn height(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[3]
    }
}

struct SoftArgminOp<T> {
    probs: Vec<T>,
    out: Vec<T>,
    depth: usize,
    offset: T,
}

impl<T: Real> Backward<T> for SoftArgminOp<T> {
    fn name(&self) -> &'static str {
        "soft_argmin"
    }

    // dD/dC_k = -p_k (k + offset - D)
    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let hw = self.out.len() / inputs[0].shape()[0];
        let d = self.depth;
        let mut gc = vec![T::zero(); inputs[0].numel()];
        for_each_chunk(&mut gc, d * hw, |bi, gp| {
            let probs = &self.probs[bi * d * hw..(bi + 1) * d * hw];
            for p in 0..hw {
                let o = bi * hw + p;
                for k in 0..d {
                    let v = T::from_usize_lossy(k) + self.offset;
                    gp[k * hw + p] = -g[o] * probs[k * hw + p] * (v - self.out[o]);
                }
            }
        });
        vec![Some(gc)]
    }
}

/// `Σ_k (k + k_offset) · softmax(-C)_k` per pixel, giving `[B, 1, H, W]`.
pub fn soft_argmin<T: Real>(cost: &CostVolume<T>) -> Result<Tensor<T>> {
    let &[b, d, h, w] = cost.values.shape() else {
        return Err(StereoError::pre(format!(
            "soft_argmin: expected [B, D, H, W] costs, got {:?}",
            cost.values.shape()
        )));
    };
    if d == 0 {
        return Err(StereoError::pre("soft_argmin: cost volume has no candidates"));
    }
    let hw = h * w;
    let c = cost.values.data();
    let offset = T::lit(cost.k_offset as f64);
    let mut probs = vec![T::zero(); b * d * hw];
    let mut out = vec![T::zero(); b * hw];
    for_each_chunk(&mut probs, d * hw, |bi, pp| {
        let cb = &c[bi * d * hw..(bi + 1) * d * hw];
        for p in 0..hw {
            let m = (0..d).map(|k| -cb[k * hw + p]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..d {
                let e = (-cb[k * hw + p] - m).exp();
                pp[k * hw + p] = e;
                z += e;
            }
            for k in 0..d {
                pp[k * hw + p] /= z;
            }
        }
    });
    for_each_chunk(&mut out, hw, |bi, o| {
        let pb = &probs[bi * d * hw..(bi + 1) * d * hw];
        for (p, v) in o.iter_mut().enumerate() {
            *v = (0..d)
                .map(|k| pb[k * hw + p] * (T::from_usize_lossy(k) + offset))
                .sum();
        }
    });
    let op = SoftArgminOp {
        probs,
        out: out.clone(),
        depth: d,
        offset,
    };
    Ok(Tensor::from_op(out, vec![b, 1, h, w], vec![cost.values.clone()], op))
}

/// Stack of 3-D convolutions that refines a `[B, D, H, W]` cost volume and
/// collapses the feature dimension back to one channel.
pub struct Regularizer<T: Real = f32> {
    depth: usize,
    layers: Vec<(Option<u8>, Conv<T>)>,
}

impl<T: Real> Regularizer<T> {
    /// Five 16-filter layers and a 1-filter projection (layers 23–28).
    pub fn stage1(depth: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::build("reg1", depth, 16, 6, 23, rng)
    }

    /// Four 4-filter layers and a 1-filter projection (layers 31–35 for
    /// stage 2, 40–44 for stage 3).
    pub fn residual(stage: u8, rng: &mut impl Rng) -> Result<Self> {
        let first = match stage {
            2 => 31,
            3 => 40,
            _ => return Err(StereoError::pre(format!("no residual regularizer for stage {stage}"))),
        };
        Self::build(&format!("reg{stage}"), RESIDUAL_DEPTH, 4, 5, first, rng)
    }

    /// Residual-sized regularizer for an arbitrary depth whose layers are
    /// not counted. Used to time a full-range pass at quarter scale.
    pub fn uncounted(name: &str, depth: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut r = Self::build(name, depth, 4, 5, 0, rng)?;
        for (id, _) in &mut r.layers {
            *id = None;
        }
        Ok(r)
    }

    fn build(name: &str, depth: usize, filters: usize, count: usize, first: u8, rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(count);
        for n in 0..count {
            let cin = if n == 0 { 1 } else { filters };
            let cout = if n + 1 == count { 1 } else { filters };
            let id = first + n as u8;
            let conv = Conv::new(&format!("{name}.l{id}"), ConvSpec::conv3d(cin, cout), rng)?;
            layers.push((Some(id), conv));
        }
        Ok(Self { depth, layers })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn layer_ids(&self) -> Vec<u8> {
        self.layers.iter().filter_map(|(id, _)| *id).collect()
    }

    pub fn regularize(&self, cost: &CostVolume<T>, ctx: &ForwardCtx) -> Result<CostVolume<T>> {
        let &[b, d, h, w] = cost.values.shape() else {
            return Err(StereoError::pre("regularize: expected [B, D, H, W] costs"));
        };
        if d != self.depth {
            return Err(StereoError::pre(format!(
                "regularize: cost volume has {d} candidates, this stage expects {}",
                self.depth
            )));
        }
        let mut x = ops::reshape(&cost.values, &[b, 1, d, h, w])?;
        for (id, conv) in &self.layers {
            x = conv.forward(&x, ctx.mode)?;
            if let Some(id) = id {
                ctx.hit(*id);
            }
        }
        Ok(CostVolume {
            values: ops::reshape(&x, &[b, d, h, w])?,
            kind: cost.kind,
            k_offset: cost.k_offset,
        })
    }
}

impl<T: Real> Module<T> for Regularizer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|(_, c)| c.params()).collect()
    }
}

/// Bilinear upsampling by `factor` with values multiplied by `factor`, so
/// the result is in pixel units of the finer scale.
pub fn upsample_disparity<T: Real>(d: &DisparityMap<T>, factor: usize) -> Result<DisparityMap<T>> {
    if factor == 1 {
        return Ok(d.clone());
    }
    if !matches!(factor, 2 | 4 | 8 | 16) || !d.scale.is_multiple_of(factor) {
        return Err(StereoError::pre(format!(
            "cannot upsample a 1/{} disparity map by {factor}",
            d.scale
        )));
    }
    let up = ops::upsample_bilinear(&d.values, factor)?;
    Ok(DisparityMap {
        values: ops::scale(&up, T::from_usize_lossy(factor)),
        scale: d.scale / factor,
        stage: d.stage,
    })
}

/// Adds a residual map to an upsampled coarse map; the result belongs to
/// the next stage.
pub fn add_residual<T: Real>(up: &DisparityMap<T>, res: &DisparityMap<T>) -> Result<DisparityMap<T>> {
    if up.scale != res.scale {
        return Err(StereoError::pre(format!(
            "add_residual: scale 1/{} does not match residual scale 1/{}",
            up.scale, res.scale
        )));
    }
    Ok(DisparityMap {
        values: ops::add(&up.values, &res.values)?,
        scale: up.scale,
        stage: up.stage + 1,
    })
}
