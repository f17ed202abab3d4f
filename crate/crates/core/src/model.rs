//! The assembled four-stage network and its stage-by-stage evaluation.

use std::path::Path;

use anystereo_tensor::nn::{Module, Param};
use anystereo_tensor::{checkpoint, ops, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::costvol::{build_full, build_residual, warp_right, RESIDUAL_DEPTH};
use crate::counters::ForwardCtx;
use crate::dispnet::{add_residual, soft_argmin, upsample_disparity, DisparityMap, Regularizer};
use crate::error::{Result, StereoError};
use crate::spn::Spn;
use crate::unet::{FeaturePyramid, Scale, UNet};

pub const NUM_STAGES: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Largest disparity representable at full resolution.
    pub max_disparity: usize,
    /// Candidates in the stage-1 volume at 1/16 scale.
    pub stage1_depth: usize,
    /// Candidates in the stage-2 and stage-3 residual volumes.
    pub residual_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            max_disparity: 192,
            stage1_depth: 192 / 16,
            residual_depth: RESIDUAL_DEPTH,
        }
    }
}

pub struct StereoModel<T: Real = f32> {
    config: ModelConfig,
    unet: UNet<T>,
    reg1: Regularizer<T>,
    reg2: Regularizer<T>,
    reg3: Regularizer<T>,
    spn: Spn<T>,
}

impl<T: Real> StereoModel<T> {
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_config(ModelConfig::default(), seed)
    }

    pub fn with_config(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.stage1_depth == 0 {
            return Err(StereoError::pre("stage-1 depth must be at least 1"));
        }
        if config.residual_depth != RESIDUAL_DEPTH {
            return Err(StereoError::pre(format!(
                "residual volumes have exactly {RESIDUAL_DEPTH} candidates"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config,
            unet: UNet::new(&mut rng)?,
            reg1: Regularizer::stage1(config.stage1_depth, &mut rng)?,
            reg2: Regularizer::residual(2, &mut rng)?,
            reg3: Regularizer::residual(3, &mut rng)?,
            spn: Spn::new(&mut rng)?,
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn unet(&self) -> &UNet<T> {
        &self.unet
    }

    pub fn spn(&self) -> &Spn<T> {
        &self.spn
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.params())?;
        Ok(())
    }

    pub fn load(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::load(path, &self.params())?;
        Ok(())
    }

    /// Starts a stage-by-stage evaluation of a `[B, 3, H, W]` pair.
    pub fn stages(&self, left: &Tensor<T>, right: &Tensor<T>, ctx: ForwardCtx) -> Result<StagedRun<'_, T>> {
        check_pair(left, right)?;
        Ok(StagedRun {
            model: self,
            ctx,
            left: left.clone(),
            right: right.clone(),
            pyramid: None,
            coarse: None,
            full3: None,
            done: 0,
        })
    }

    /// All four full-resolution outputs.
    pub fn forward(&self, left: &Tensor<T>, right: &Tensor<T>, ctx: ForwardCtx) -> Result<[DisparityMap<T>; 4]> {
        let mut run = self.stages(left, right, ctx)?;
        let mut out = Vec::with_capacity(4);
        while let Some(d) = run.next_stage()? {
            out.push(d);
        }
        Ok(out.try_into().expect("four stages"))
    }

    /// One residual stage at the scale of `left`/`right` (stage 2 at 1/8,
    /// stage 3 at 1/4), refining `coarse` from the previous scale.
    pub fn residual_stage(
        &self,
        stage: u8,
        left: &Tensor<T>,
        right: &Tensor<T>,
        coarse: &DisparityMap<T>,
        ctx: &ForwardCtx,
    ) -> Result<DisparityMap<T>> {
        let (reg, ids) = match stage {
            2 => (&self.reg2, [Some(37), Some(21), Some(36), Some(38)]),
            3 => (&self.reg3, [None, Some(22), Some(45), Some(46)]),
            _ => return Err(StereoError::pre(format!("stage {stage} is not a residual stage"))),
        };
        let [up_id, cv_id, reg_id, add_id] = ids;
        let hit = |id: Option<u8>| id.into_iter().for_each(|i| ctx.hit(i));

        let up = upsample_disparity(coarse, 2)?;
        hit(up_id);
        let warped = warp_right(right, &up.values)?;
        let cv = build_residual(left, &warped)?;
        hit(cv_id);
        let cv = reg.regularize(&cv, ctx)?;
        let res = DisparityMap {
            values: soft_argmin(&cv)?,
            scale: up.scale,
            stage: up.stage,
        };
        hit(reg_id);
        let d = add_residual(&up, &res)?;
        hit(add_id);
        Ok(d)
    }
}

impl<T: Real> Module<T> for StereoModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.unet.params();
        p.extend(self.reg1.params());
        p.extend(self.reg2.params());
        p.extend(self.reg3.params());
        p.extend(self.spn.params());
        p
    }
}

pub(crate) fn check_pair<T: Real>(left: &Tensor<T>, right: &Tensor<T>) -> Result<()> {
    let &[_, c, h, w] = left.shape() else {
        return Err(StereoError::pre(format!(
            "expected [B, 3, H, W] images, got {:?}",
            left.shape()
        )));
    };
    if left.shape() != right.shape() {
        return Err(StereoError::pre(format!(
            "left image shape {:?} differs from right image shape {:?}",
            left.shape(),
            right.shape()
        )));
    }
    if c != 3 {
        return Err(StereoError::pre(format!("expected 3 image channels, got {c}")));
    }
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(StereoError::NotDivisible { height: h, width: w });
    }
    Ok(())
}

fn split<T: Real>(t: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let b = t.shape()[0] / 2;
    Ok((ops::narrow(t, 0, 0, b)?, ops::narrow(t, 0, b, b)?))
}

/// Evaluation state between stages. Left and right images travel through
/// the feature extractor together as one batch of size `2B`.
pub struct StagedRun<'m, T: Real = f32> {
    model: &'m StereoModel<T>,
    ctx: ForwardCtx,
    left: Tensor<T>,
    right: Tensor<T>,
    pyramid: Option<FeaturePyramid<T>>,
    coarse: Option<DisparityMap<T>>,
    full3: Option<DisparityMap<T>>,
    done: u8,
}

impl<T: Real> StagedRun<'_, T> {
    /// Number of stages completed so far.
    pub fn completed(&self) -> u8 {
        self.done
    }

    pub fn ctx(&self) -> &ForwardCtx {
        &self.ctx
    }

    /// Features of the stereo pair computed so far.
    pub fn pyramid(&self) -> Option<&FeaturePyramid<T>> {
        self.pyramid.as_ref()
    }

    /// Native-scale disparity of the latest residual-capable stage.
    pub fn coarse(&self) -> Option<&DisparityMap<T>> {
        self.coarse.as_ref()
    }

    /// Runs the next stage and returns its full-resolution disparity, or
    /// `None` once all four stages are done.
    pub fn next_stage(&mut self) -> Result<Option<DisparityMap<T>>> {
        let stage = self.done + 1;
        let out = match stage {
            1 => self.stage1()?,
            2 => self.residual(Scale::S8, 39)?,
            3 => {
                let d = self.residual(Scale::S4, 47)?;
                self.full3 = Some(d.clone());
                d
            }
            4 => {
                let d3 = self.full3.take().expect("stage 3 output");
                self.pyramid = None;
                self.model.spn.refine(&self.left, &d3, &self.ctx)?
            }
            _ => return Ok(None),
        };
        self.done = stage;
        Ok(Some(out))
    }

    fn stage1(&mut self) -> Result<DisparityMap<T>> {
        let (m, ctx) = (self.model, &self.ctx);
        let both = ops::cat(&[self.left.clone(), self.right.clone()], 0)?;
        let pyramid = m.unet.extract(&both, Scale::S16, ctx)?;
        let (fl, fr) = split(&pyramid.s16)?;
        let cv = build_full(&fl, &fr, m.config.stage1_depth)?;
        ctx.hit(20);
        let cv = m.reg1.regularize(&cv, ctx)?;
        let d = DisparityMap {
            values: soft_argmin(&cv)?,
            scale: 16,
            stage: 1,
        };
        ctx.hit(29);
        let full = upsample_disparity(&d, 16)?;
        ctx.hit(30);
        self.pyramid = Some(pyramid);
        self.coarse = Some(d);
        Ok(full)
    }

    fn residual(&mut self, scale: Scale, out_id: u8) -> Result<DisparityMap<T>> {
        let (m, ctx) = (self.model, &self.ctx);
        let pyramid = self.pyramid.as_mut().expect("stage 1 features");
        m.unet.continue_from(pyramid, scale, ctx)?;
        let (fl, fr) = split(pyramid.get(scale).expect("features just computed"))?;
        let coarse = self.coarse.as_ref().expect("previous stage output");
        let stage = self.done + 1;
        let d = m.residual_stage(stage, &fl, &fr, coarse, ctx)?;
        let full = upsample_disparity(&d, scale.factor())?;
        ctx.hit(out_id);
        self.coarse = Some(d);
        Ok(full)
    }
}

/// Stage 3 with a full-range volume at 1/4 scale instead of a residual one.
/// Only used to measure what the residual design saves.
pub struct FullRangeStage3<T: Real = f32> {
    depth: usize,
    reg: Regularizer<T>,
}

impl<T: Real> FullRangeStage3<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let depth = config.max_disparity / 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            depth,
            reg: Regularizer::uncounted("full3", depth, &mut rng)?,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn run(&self, left: &Tensor<T>, right: &Tensor<T>, ctx: &ForwardCtx) -> Result<DisparityMap<T>> {
        let cv = build_full(left, right, self.depth)?;
        let cv = self.reg.regularize(&cv, ctx)?;
        Ok(DisparityMap {
            values: soft_argmin(&cv)?,
            scale: 4,
            stage: 3,
        })
    }
}
