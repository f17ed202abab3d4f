//! Shared-weight U-Net feature extractor with lazily computed scales.

use anystereo_tensor::nn::{Conv, ConvSpec, Module, Param};
use anystereo_tensor::{ops, Real, Tensor};
use rand::Rng;

use crate::counters::ForwardCtx;
use crate::error::{Result, StereoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scale {
    S16,
    S8,
    S4,
}

impl Scale {
    pub fn factor(self) -> usize {
        match self {
            Scale::S16 => 16,
            Scale::S8 => 8,
            Scale::S4 => 4,
        }
    }

    pub fn from_factor(factor: usize) -> Option<Self> {
        match factor {
            16 => Some(Scale::S16),
            8 => Some(Scale::S8),
            4 => Some(Scale::S4),
            _ => None,
        }
    }

    /// Channel count of the features at this scale.
    pub fn channels(self) -> usize {
        match self {
            Scale::S16 => 8,
            Scale::S8 => 4,
            Scale::S4 => 2,
        }
    }

    /// Id of the layer that produces this scale.
    pub fn layer(self) -> u8 {
        match self {
            Scale::S16 => 11,
            Scale::S8 => 15,
            Scale::S4 => 19,
        }
    }
}

/// Features computed so far, plus the skip activations that finer scales
/// still need.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T: Real = f32> {
    pub s16: Tensor<T>,
    pub s8: Option<Tensor<T>>,
    pub s4: Option<Tensor<T>>,
    skip5: Option<Tensor<T>>,
    skip8: Option<Tensor<T>>,
}

impl<T: Real> FeaturePyramid<T> {
    pub fn get(&self, scale: Scale) -> Option<&Tensor<T>> {
        match scale {
            Scale::S16 => Some(&self.s16),
            Scale::S8 => self.s8.as_ref(),
            Scale::S4 => self.s4.as_ref(),
        }
    }

    /// Finest scale computed so far.
    pub fn finest(&self) -> Scale {
        if self.s4.is_some() {
            Scale::S4
        } else if self.s8.is_some() {
            Scale::S8
        } else {
            Scale::S16
        }
    }
}

struct Layer<T: Real> {
    id: u8,
    conv: Conv<T>,
}

impl<T: Real> Layer<T> {
    fn new(id: u8, spec: ConvSpec, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            id,
            conv: Conv::new(&format!("unet.l{id}"), spec, rng)?,
        })
    }

    fn forward(&self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, ctx.mode)?;
        ctx.hit(self.id);
        Ok(y)
    }
}

pub struct UNet<T: Real = f32> {
    l1: Layer<T>,
    l2: Layer<T>,
    l4: Layer<T>,
    l5: Layer<T>,
    l7: Layer<T>,
    l8: Layer<T>,
    l10: Layer<T>,
    l11: Layer<T>,
    l14: Layer<T>,
    l15: Layer<T>,
    l18: Layer<T>,
    l19: Layer<T>,
}

impl<T: Real> UNet<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let c = ConvSpec::conv2d;
        let net = Self {
            // Raw pixels are already standardized, so layer 1 skips BN/ReLU.
            l1: Layer::new(1, c(3, 1).plain(), rng)?,
            l2: Layer::new(2, c(1, 1).stride(2), rng)?,
            l4: Layer::new(4, c(1, 2), rng)?,
            l5: Layer::new(5, c(2, 2), rng)?,
            l7: Layer::new(7, c(2, 4), rng)?,
            l8: Layer::new(8, c(4, 4), rng)?,
            l10: Layer::new(10, c(4, 8), rng)?,
            l11: Layer::new(11, c(8, 8), rng)?,
            l14: Layer::new(14, c(12, 4), rng)?,
            l15: Layer::new(15, c(4, 4), rng)?,
            l18: Layer::new(18, c(6, 2), rng)?,
            l19: Layer::new(19, c(2, 2), rng)?,
        };
        let total_stride = net.l1.conv.spec().stride * net.l2.conv.spec().stride * 2 * 2 * 2;
        assert_eq!(total_stride, 16, "encoder must reach 1/16 scale");
        Ok(net)
    }

    /// Runs the encoder (layers 1–11) and then the decoder up to `up_to`.
    pub fn extract(&self, image: &Tensor<T>, up_to: Scale, ctx: &ForwardCtx) -> Result<FeaturePyramid<T>> {
        let &[_, c, h, w] = image.shape() else {
            return Err(StereoError::pre(format!(
                "feature extraction expects a [B, 3, H, W] image, got {:?}",
                image.shape()
            )));
        };
        if c != 3 {
            return Err(StereoError::pre(format!("expected 3 image channels, got {c}")));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(StereoError::NotDivisible { height: h, width: w });
        }
        let x = self.l1.forward(image, ctx)?;
        let x = self.l2.forward(&x, ctx)?;
        let x = pool(&x, 3, ctx)?;
        let x = self.l4.forward(&x, ctx)?;
        let skip5 = self.l5.forward(&x, ctx)?;
        let x = pool(&skip5, 6, ctx)?;
        let x = self.l7.forward(&x, ctx)?;
        let skip8 = self.l8.forward(&x, ctx)?;
        let x = pool(&skip8, 9, ctx)?;
        let x = self.l10.forward(&x, ctx)?;
        let s16 = self.l11.forward(&x, ctx)?;
        let mut p = FeaturePyramid {
            s16,
            s8: None,
            s4: None,
            skip5: Some(skip5),
            skip8: Some(skip8),
        };
        if up_to >= Scale::S8 {
            self.continue_from(&mut p, Scale::S8, ctx)?;
        }
        self.continue_from(&mut p, up_to, ctx)?;
        Ok(p)
    }

    /// Adds the scale `to` to `p` without recomputing the encoder. The next
    /// coarser scale must already be present; a scale that is already
    /// present is left untouched.
    pub fn continue_from(&self, p: &mut FeaturePyramid<T>, to: Scale, ctx: &ForwardCtx) -> Result<()> {
        if to == Scale::S8 && p.s8.is_none() {
            let skip = p
                .skip8
                .take()
                .ok_or_else(|| StereoError::pre("layer 8 activation is no longer available"))?;
            p.s8 = Some(self.decode(&p.s16, &skip, [12, 13], [&self.l14, &self.l15], ctx)?);
        }
        if to == Scale::S4 && p.s4.is_none() {
            let s8 = p
                .s8
                .as_ref()
                .ok_or_else(|| StereoError::pre("1/4 features require 1/8 features first"))?;
            let skip = p
                .skip5
                .take()
                .ok_or_else(|| StereoError::pre("layer 5 activation is no longer available"))?;
            p.s4 = Some(self.decode(s8, &skip, [16, 17], [&self.l18, &self.l19], ctx)?);
        }
        Ok(())
    }

    fn decode(
        &self,
        coarse: &Tensor<T>,
        skip: &Tensor<T>,
        [up_id, cat_id]: [u8; 2],
        [a, b]: [&Layer<T>; 2],
        ctx: &ForwardCtx,
    ) -> Result<Tensor<T>> {
        let up = ops::upsample_bilinear(coarse, 2)?;
        ctx.hit(up_id);
        let x = ops::cat(&[up, skip.clone()], 1)?;
        ctx.hit(cat_id);
        let x = a.forward(&x, ctx)?;
        b.forward(&x, ctx)
    }
}

fn pool<T: Real>(x: &Tensor<T>, id: u8, ctx: &ForwardCtx) -> Result<Tensor<T>> {
    let y = ops::maxpool2(x)?;
    ctx.hit(id);
    Ok(y)
}

impl<T: Real> Module<T> for UNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        [
            &self.l1, &self.l2, &self.l4, &self.l5, &self.l7, &self.l8, &self.l10, &self.l11, &self.l14,
            &self.l15, &self.l18, &self.l19,
        ]
        .into_iter()
        .flat_map(|l| l.conv.params())
        .collect()
    }
}
