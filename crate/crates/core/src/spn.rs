//! Spatial propagation refinement of the full-resolution disparity.
//!
//! An 8-channel embedding of the disparity is smoothed by four directional
//! linear recurrences whose three-way connection weights come from the left
//! image. Affinity channel `3c + m` holds the weight that embedding channel
//! `c` gives to neighbor `m` of the previous row or column (`m - 1` is the
//! cross-axis offset). The same weights drive all four directions.

use anystereo_tensor::exec::{for_each_chunk, for_each_chunk2};
use anystereo_tensor::nn::{Conv, ConvSpec, Module, Param};
use anystereo_tensor::{ops, Backward, Real, Tensor};
use rand::Rng;

use crate::counters::ForwardCtx;
use crate::dispnet::DisparityMap;
use crate::error::{Result, StereoError};

pub const EMBED_CHANNELS: usize = 8;
pub const NEIGHBORS: usize = 3;
pub const AFFINITY_CHANNELS: usize = EMBED_CHANNELS * NEIGHBORS;
const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftToRight,
        Direction::RightToLeft,
        Direction::TopToBottom,
        Direction::BottomToTop,
    ];
}

/// Maps (scan step, cross-axis position) to a flat pixel index.
#[derive(Clone, Copy)]
struct Scan {
    dir: Direction,
    h: usize,
    w: usize,
}

impl Scan {
    fn steps(&self) -> usize {
        match self.dir {
            Direction::LeftToRight | Direction::RightToLeft => self.w,
            _ => self.h,
        }
    }

    fn cross(&self) -> usize {
        match self.dir {
            Direction::LeftToRight | Direction::RightToLeft => self.h,
            _ => self.w,
        }
    }

    #[inline]
    fn at(&self, s: usize, q: usize) -> usize {
        match self.dir {
            Direction::LeftToRight => q * self.w + s,
            Direction::RightToLeft => q * self.w + (self.w - 1 - s),
            Direction::TopToBottom => s * self.w + q,
            Direction::BottomToTop => (self.h - 1 - s) * self.w + q,
        }
    }

    /// Cross-axis position of neighbor `m` of `q`, clamped into range.
    #[inline]
    fn neighbor(&self, q: usize, m: usize) -> usize {
        (q + m).saturating_sub(1).min(self.cross() - 1)
    }
}

/// Runs one recurrence over a single `h × w` plane. `w3` holds the three
/// weight planes back to back.
fn scan_plane<T: Real>(x: &[T], w3: &[T], hid: &mut [T], scan: Scan) {
    let hw = scan.h * scan.w;
    for q in 0..scan.cross() {
        let p = scan.at(0, q);
        hid[p] = x[p];
    }
    for s in 1..scan.steps() {
        for q in 0..scan.cross() {
            let p = scan.at(s, q);
            let mut acc = T::zero();
            let mut gate = T::one();
            for m in 0..NEIGHBORS {
                let wm = w3[m * hw + p];
                acc += wm * hid[scan.at(s - 1, scan.neighbor(q, m))];
                gate -= wm.abs();
            }
            hid[p] = gate * x[p] + acc;
        }
    }
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

/// Reverse pass of [`scan_plane`]; accumulates into `gx` and `gw3`.
fn scan_plane_backward<T: Real>(g: &[T], x: &[T], w3: &[T], hid: &[T], gx: &mut [T], gw3: &mut [T], scan: Scan) {
    let hw = scan.h * scan.w;
    let mut gh = g.to_vec();
    for s in (1..scan.steps()).rev() {
        for q in 0..scan.cross() {
            let p = scan.at(s, q);
            let gp = gh[p];
            let mut gate = T::one();
            for m in 0..NEIGHBORS {
                let wm = w3[m * hw + p];
                let nb = scan.at(s - 1, scan.neighbor(q, m));
                gate -= wm.abs();
                gw3[m * hw + p] += gp * (hid[nb] - sign(wm) * x[p]);
                gh[nb] += wm * gp;
            }
            gx[p] += gate * gp;
        }
    }
    for q in 0..scan.cross() {
        let p = scan.at(0, q);
        gx[p] += gh[p];
    }
}

struct PropagateOp<T> {
    dirs: Vec<Direction>,
    /// Hidden states per (batch, channel) plane, one block per direction.
    hidden: Vec<T>,
}

impl<T: Real> Backward<T> for PropagateOp<T> {
    fn name(&self) -> &'static str {
        "propagate"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (emb, aff) = (&inputs[0], &inputs[1]);
        let &[_, _, h, w] = emb.shape() else { unreachable!() };
        let hw = h * w;
        let nd = self.dirs.len();
        let inv = T::one() / T::from_usize_lossy(nd);
        let (xd, ad) = (emb.data(), aff.data());
        let mut gx = vec![T::zero(); emb.numel()];
        let mut gw = vec![T::zero(); aff.numel()];
        for_each_chunk2(&mut gx, hw, &mut gw, NEIGHBORS * hw, |plane, gxp, gwp| {
            let gp: Vec<T> = g[plane * hw..(plane + 1) * hw].iter().map(|&v| v * inv).collect();
            let x = &xd[plane * hw..(plane + 1) * hw];
            let w3 = &ad[plane * NEIGHBORS * hw..(plane + 1) * NEIGHBORS * hw];
            for (di, &dir) in self.dirs.iter().enumerate() {
                let hid = &self.hidden[(plane * nd + di) * hw..(plane * nd + di + 1) * hw];
                scan_plane_backward(&gp, x, w3, hid, gxp, gwp, Scan { dir, h, w });
            }
        });
        vec![emb.requires_grad().then_some(gx), aff.requires_grad().then_some(gw)]
    }
}

/// Averages the recurrences along `dirs`. The affinity must be normalized.
pub fn propagate_directions<T: Real>(emb: &Tensor<T>, aff: &Tensor<T>, dirs: &[Direction]) -> Result<Tensor<T>> {
    let &[b, c, h, w] = emb.shape() else {
        return Err(StereoError::pre(format!(
            "propagate: expected a [B, C, H, W] embedding, got {:?}",
            emb.shape()
        )));
    };
    if aff.shape() != [b, NEIGHBORS * c, h, w] {
        return Err(StereoError::pre(format!(
            "propagate: affinity shape {:?} must be [{b}, {}, {h}, {w}]",
            aff.shape(),
            NEIGHBORS * c
        )));
    }
    if dirs.is_empty() {
        return Err(StereoError::pre("propagate: no directions given"));
    }
    let hw = h * w;
    let ad = aff.data();
    for plane in 0..b * c {
        for p in 0..hw {
            let sum: f64 = (0..NEIGHBORS)
                .map(|m| ad[(plane * NEIGHBORS + m) * hw + p].as_f64().abs())
                .sum();
            if sum > 1.0 + NORM_TOLERANCE || !sum.is_finite() {
                return Err(StereoError::UnnormalizedAffinity {
                    sum,
                    pixel: plane * hw + p,
                });
            }
        }
    }

    let nd = dirs.len();
    let inv = T::one() / T::from_usize_lossy(nd);
    let xd = emb.data();
    let mut out = vec![T::zero(); b * c * hw];
    let mut hidden = vec![T::zero(); b * c * nd * hw];
    for_each_chunk2(&mut out, hw, &mut hidden, nd * hw, |plane, o, hid| {
        let x = &xd[plane * hw..(plane + 1) * hw];
        let w3 = &ad[plane * NEIGHBORS * hw..(plane + 1) * NEIGHBORS * hw];
        for (di, &dir) in dirs.iter().enumerate() {
            let hd = &mut hid[di * hw..(di + 1) * hw];
            scan_plane(x, w3, hd, Scan { dir, h, w });
            for (ov, hv) in o.iter_mut().zip(hd.iter()) {
                *ov += *hv * inv;
            }
        }
    });
    let op = PropagateOp {
        dirs: dirs.to_vec(),
        hidden,
    };
    Ok(Tensor::from_op(out, emb.shape().to_vec(), vec![emb.clone(), aff.clone()], op))
}

/// Mean of the four directional recurrences.
pub fn propagate<T: Real>(emb: &Tensor<T>, aff: &AffinityField<T>) -> Result<Tensor<T>> {
    propagate_directions(emb, &aff.weights, &Direction::ALL)
}

struct NormalizeOp<T> {
    sums: Vec<T>,
}

impl<T: Real> Backward<T> for NormalizeOp<T> {
    fn name(&self) -> &'static str {
        "normalize_affinity"
    }

    fn backward(&self, g: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let raw = inputs[0].data();
        let hw = inputs[0].shape()[2] * inputs[0].shape()[3];
        let mut gr = vec![T::zero(); raw.len()];
        for_each_chunk(&mut gr, NEIGHBORS * hw, |plane, gp| {
            let base = plane * NEIGHBORS * hw;
            for p in 0..hw {
                let s = self.sums[plane * hw + p];
                if s <= T::one() {
                    for m in 0..NEIGHBORS {
                        gp[m * hw + p] = g[base + m * hw + p];
                    }
                    continue;
                }
                let dot: T = (0..NEIGHBORS)
                    .map(|m| g[base + m * hw + p] * raw[base + m * hw + p])
                    .sum();
                for m in 0..NEIGHBORS {
                    let i = m * hw + p;
                    gp[i] = g[base + i] / s - sign(raw[base + i]) * dot / (s * s);
                }
            }
        });
        vec![Some(gr)]
    }
}

/// Divides each neighbor triple by `max(1, Σ|w|)`.
pub fn normalize_affinity<T: Real>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    let &[b, c3, h, w] = raw.shape() else {
        return Err(StereoError::pre("normalize_affinity: expected [B, 3C, H, W]"));
    };
    if c3 % NEIGHBORS != 0 {
        return Err(StereoError::pre(format!(
            "normalize_affinity: {c3} channels is not a multiple of {NEIGHBORS}"
        )));
    }
    let hw = h * w;
    let rd = raw.data();
    let mut out = vec![T::zero(); rd.len()];
    let mut sums = vec![T::zero(); b * (c3 / NEIGHBORS) * hw];
    for_each_chunk2(&mut out, NEIGHBORS * hw, &mut sums, hw, |plane, o, sp| {
        let base = plane * NEIGHBORS * hw;
        for p in 0..hw {
            let s: T = (0..NEIGHBORS).map(|m| rd[base + m * hw + p].abs()).sum();
            sp[p] = s;
            let div = s.max(T::one());
            for m in 0..NEIGHBORS {
                o[m * hw + p] = rd[base + m * hw + p] / div;
            }
        }
    });
    Ok(Tensor::from_op(out, raw.shape().to_vec(), vec![raw.clone()], NormalizeOp { sums }))
}

/// Normalized propagation weights `[B, 24, H, W]`.
#[derive(Debug, Clone)]
pub struct AffinityField<T: Real = f32> {
    pub weights: Tensor<T>,
}

struct Layer<T: Real> {
    id: u8,
    conv: Conv<T>,
}

impl<T: Real> Layer<T> {
    fn forward(&self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, ctx.mode)?;
        ctx.hit(self.id);
        Ok(y)
    }
}

pub struct Spn<T: Real = f32> {
    guide: Vec<Layer<T>>,
    affinity: Layer<T>,
    embed: Layer<T>,
    project: Layer<T>,
}

impl<T: Real> Spn<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let c = ConvSpec::conv2d;
        let layer = |id: u8, spec: ConvSpec, rng: &mut _| -> Result<Layer<T>> {
            Ok(Layer {
                id,
                conv: Conv::new(&format!("spn.l{id}"), spec, rng)?,
            })
        };
        Ok(Self {
            guide: vec![
                layer(48, c(3, 16).plain(), rng)?,
                layer(49, c(16, 16), rng)?,
                layer(50, c(16, 16), rng)?,
                layer(51, c(16, 16), rng)?,
            ],
            affinity: layer(52, c(16, AFFINITY_CHANNELS), rng)?,
            embed: layer(53, c(1, EMBED_CHANNELS).plain(), rng)?,
            project: Layer {
                id: 55,
                conv: Conv::zeroed("spn.l55", c(EMBED_CHANNELS, 1))?,
            },
        })
    }

    pub fn predict_affinity(&self, image: &Tensor<T>, ctx: &ForwardCtx) -> Result<AffinityField<T>> {
        let mut x = image.clone();
        for l in &self.guide {
            x = l.forward(&x, ctx)?;
        }
        let raw = self.affinity.forward(&x, ctx)?;
        Ok(AffinityField {
            weights: normalize_affinity(&raw)?,
        })
    }

    pub fn embed_disparity(&self, d3: &DisparityMap<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if d3.scale != 1 {
            return Err(StereoError::pre(format!(
                "refinement needs a full-resolution disparity, got scale 1/{}",
                d3.scale
            )));
        }
        self.embed.forward(&d3.values, ctx)
    }

    /// Projects the propagated embedding to one channel and adds it to the
    /// stage-3 disparity.
    pub fn finalize(&self, propagated: &Tensor<T>, d3: &DisparityMap<T>, ctx: &ForwardCtx) -> Result<DisparityMap<T>> {
        let correction = self.project.forward(propagated, ctx)?;
        Ok(DisparityMap {
            values: ops::add(&d3.values, &correction)?,
            scale: 1,
            stage: 4,
        })
    }

    /// Full refinement: layers 48–55.
    pub fn refine(&self, image: &Tensor<T>, d3: &DisparityMap<T>, ctx: &ForwardCtx) -> Result<DisparityMap<T>> {
        let aff = self.predict_affinity(image, ctx)?;
        let emb = self.embed_disparity(d3, ctx)?;
        let prop = propagate(&emb, &aff)?;
        ctx.hit(54);
        self.finalize(&prop, d3, ctx)
    }
}

impl<T: Real> Module<T> for Spn<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.guide
            .iter()
            .chain([&self.affinity, &self.embed, &self.project])
            .flat_map(|l| l.conv.params())
            .collect()
    }
}
