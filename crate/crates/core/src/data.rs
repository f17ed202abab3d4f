//! Synthetic stereograms with exact ground truth, batching, and on-disk
//! datasets.
//!
//! A scene is a textured background plane plus 1–4 fronto-parallel
//! rectangles, each at its own integer disparity. Larger disparity means
//! closer, so a rectangle with larger disparity occludes one with smaller.
//! Every layer carries its own multi-scale value-noise texture, defined in
//! left-image coordinates; the right image shows layer content at
//! `x + d`, which makes `left[i, j] == right[i, j - d]` wherever the left
//! pixel is visible in both views.

use std::path::{Path, PathBuf};

use anystereo_tensor::exec::map_range;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, StereoError};
use crate::io::{read_pfm, write_pfm, PfmImage};
use crate::Tensor;

/// One rectified pair with ground truth.
#[derive(Debug, Clone)]
pub struct StereoSample {
    /// `[3, H, W]`, standardized.
    pub left: Tensor,
    /// `[3, H, W]`, standardized with the left image's statistics.
    pub right: Tensor,
    /// `[1, H, W]` in pixels.
    pub disparity: Tensor,
    /// `[1, H, W]`, 1 where the ground truth is usable.
    pub mask: Tensor,
}

impl StereoSample {
    pub fn height(&self) -> usize {
        self.left.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.left.shape()[2]
    }

    fn check(&self) -> Result<()> {
        let &[c, h, w] = self.left.shape() else {
            return Err(StereoError::pre("sample images must be [3, H, W]"));
        };
        if c != 3 || self.right.shape() != self.left.shape() {
            return Err(StereoError::pre("sample images must both be [3, H, W]"));
        }
        if self.disparity.shape() != [1, h, w] || self.mask.shape() != [1, h, w] {
            return Err(StereoError::pre("sample disparity and mask must be [1, H, W]"));
        }
        Ok(())
    }
}

/// Cell sizes of the value-noise octaves, fine to coarse.
const OCTAVES: [usize; 5] = [1, 2, 4, 8, 16];

/// Sum of bilinearly interpolated random grids, three channels, over an
/// `h × tw` canvas. Each octave's amplitude grows with its cell size, giving
/// the roughly `1/f` spectrum of natural images.
fn texture(rng: &mut impl Rng, h: usize, tw: usize) -> Vec<f32> {
    let mut tex = vec![0f32; 3 * h * tw];
    for &cell in &OCTAVES {
        let gh = h / cell + 2;
        let gw = tw / cell + 2;
        for c in 0..3 {
            let amp = cell as f32;
            let grid: Vec<f32> = (0..gh * gw).map(|_| amp * rng.gen_range(-1.0f32..1.0)).collect();
            for i in 0..h {
                let (gi, fi) = (i / cell, (i % cell) as f32 / cell as f32);
                for u in 0..tw {
                    let (gu, fu) = (u / cell, (u % cell) as f32 / cell as f32);
                    let g = |a: usize, b: usize| grid[a * gw + b];
                    let top = g(gi, gu) * (1.0 - fu) + g(gi, gu + 1) * fu;
                    let bot = g(gi + 1, gu) * (1.0 - fu) + g(gi + 1, gu + 1) * fu;
                    tex[(c * h + i) * tw + u] += top * (1.0 - fi) + bot * fi;
                }
            }
        }
    }
    tex
}

struct Rect {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    disparity: usize,
}

impl Rect {
    fn contains(&self, i: usize, j: isize) -> bool {
        i >= self.top && i < self.top + self.height && j >= self.left as isize && j < (self.left + self.width) as isize
    }
}

/// Random-texture stereogram of size `h × w` with disparities in
/// `0..=max_d`. Deterministic for a given seed.
pub fn gen_random_dot_stereogram(h: usize, w: usize, max_d: usize, seed: u64) -> Result<StereoSample> {
    if h == 0 || w == 0 || !h.is_multiple_of(16) || !w.is_multiple_of(16) {
        return Err(StereoError::NotDivisible { height: h, width: w });
    }
    if 4 * max_d >= w {
        return Err(StereoError::pre(format!(
            "max disparity {max_d} must be below a quarter of the width {w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rects = rng.gen_range(1..=4usize);
    let mut levels: Vec<usize> = (0..=max_d).collect();
    levels.shuffle(&mut rng);
    levels.truncate(n_rects + 1);
    levels.sort_unstable();
    // With max_d < n_rects some rectangles share a level; that is harmless.
    while levels.len() < n_rects + 1 {
        levels.push(*levels.last().expect("at least one level"));
    }
    let background = levels[0];
    let rects: Vec<Rect> = levels[1..]
        .iter()
        .map(|&disparity| {
            let height = rng.gen_range(h / 8..=h / 2);
            let width = rng.gen_range(w / 8..=w / 2);
            Rect {
                top: rng.gen_range(0..=h - height),
                left: rng.gen_range(0..=w - width),
                height,
                width,
                disparity,
            }
        })
        .collect();

    let tw = w + max_d + 1;
    let textures: Vec<Vec<f32>> = (0..=rects.len()).map(|_| texture(&mut rng, h, tw)).collect();

    // Layer 0 is the background; rectangles are sorted by disparity so the
    // last one that contains a point is the visible one.
    let disp_of = |layer: usize| if layer == 0 { background } else { rects[layer - 1].disparity };
    let top_layer = |i: usize, j: isize, right_view: bool| -> usize {
        let mut top = 0;
        for (k, r) in rects.iter().enumerate() {
            let lj = if right_view { j + r.disparity as isize } else { j };
            if r.contains(i, lj) {
                top = k + 1;
            }
        }
        top
    };

    let hw = h * w;
    let mut left = vec![0f32; 3 * hw];
    let mut right = vec![0f32; 3 * hw];
    let mut disparity = vec![0f32; hw];
    let mut mask = vec![0f32; hw];
    for i in 0..h {
        for j in 0..w {
            let lt = top_layer(i, j as isize, false);
            let d = disp_of(lt);
            let rt = top_layer(i, j as isize, true);
            let rd = disp_of(rt);
            for c in 0..3 {
                left[c * hw + i * w + j] = textures[lt][(c * h + i) * tw + j];
                right[c * hw + i * w + j] = textures[rt][(c * h + i) * tw + j + rd];
            }
            disparity[i * w + j] = d as f32;
            let visible = j >= d && top_layer(i, (j - d) as isize, true) == lt;
            mask[i * w + j] = if visible { 1.0 } else { 0.0 };
        }
    }
    standardize(&mut left, &mut right, hw);
    Ok(StereoSample {
        left: Tensor::new(left, &[3, h, w])?,
        right: Tensor::new(right, &[3, h, w])?,
        disparity: Tensor::new(disparity, &[1, h, w])?,
        mask: Tensor::new(mask, &[1, h, w])?,
    })
}

/// Per-channel zero mean and unit variance, using the left image's
/// statistics for both views so corresponding pixels stay equal.
pub fn standardize(left: &mut [f32], right: &mut [f32], plane: usize) {
    for c in 0..left.len() / plane {
        let l = &left[c * plane..(c + 1) * plane];
        let mean = l.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let var = l.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        let inv = 1.0 / var.sqrt().max(1e-6);
        for buf in [&mut *left, &mut *right] {
            for v in &mut buf[c * plane..(c + 1) * plane] {
                *v = ((*v as f64 - mean) * inv) as f32;
            }
        }
    }
}

/// Stacked `[B, ...]` tensors for a batch of samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub left: Tensor,
    pub right: Tensor,
    pub disparity: Tensor,
    pub mask: Tensor,
}

pub fn make_batch(samples: &[&StereoSample]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| StereoError::pre("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let b = samples.len();
    let stack = |get: fn(&StereoSample) -> &Tensor, c: usize| -> Result<Tensor> {
        let mut data = Vec::with_capacity(b * c * h * w);
        for s in samples {
            let t = get(s);
            if t.shape() != [c, h, w] {
                return Err(StereoError::pre(format!(
                    "batch samples differ in shape: {:?} vs [{c}, {h}, {w}]",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        Ok(Tensor::new(data, &[b, c, h, w])?)
    };
    Ok(Batch {
        left: stack(|s| &s.left, 3)?,
        right: stack(|s| &s.right, 3)?,
        disparity: stack(|s| &s.disparity, 1)?,
        mask: stack(|s| &s.mask, 1)?,
    })
}

/// In-memory collection of samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<StereoSample>,
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 step, so neighbouring indices get unrelated streams.
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Dataset {
    /// `count` stereograms generated in parallel; sample `i` depends only on
    /// `seed` and `i`.
    pub fn synthetic(count: usize, h: usize, w: usize, max_d: usize, seed: u64) -> Result<Self> {
        let samples = map_range(count, |i| gen_random_dot_stereogram(h, w, max_d, sample_seed(seed, i)));
        Ok(Self {
            samples: samples.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the last `holdout` samples.
    pub fn split(mut self, holdout: usize) -> (Dataset, Dataset) {
        let at = self.samples.len().saturating_sub(holdout);
        let rest = self.samples.split_off(at);
        (self, Dataset { samples: rest })
    }

    fn paths(dir: &Path, i: usize) -> [PathBuf; 4] {
        ["left", "right", "disp", "mask"].map(|k| dir.join(format!("{i:05}_{k}.pfm")))
    }

    /// Writes `{i:05}_left.pfm`, `_right.pfm`, `_disp.pfm` and `_mask.pfm`
    /// for every sample.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| StereoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (i, s) in self.samples.iter().enumerate() {
            let [l, r, d, m] = Self::paths(dir, i);
            write_pfm(l, &to_pfm(&s.left)?)?;
            write_pfm(r, &to_pfm(&s.right)?)?;
            write_pfm(d, &to_pfm(&s.disparity)?)?;
            write_pfm(m, &to_pfm(&s.mask)?)?;
        }
        Ok(())
    }

    /// Reads consecutive samples starting at index 0 until one is missing.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut samples = Vec::new();
        loop {
            let [l, r, d, m] = Self::paths(dir, samples.len());
            if !l.exists() {
                break;
            }
            let s = StereoSample {
                left: from_pfm(&read_pfm(&l)?)?,
                right: from_pfm(&read_pfm(&r)?)?,
                disparity: from_pfm(&read_pfm(&d)?)?,
                mask: from_pfm(&read_pfm(&m)?)?,
            };
            s.check().map_err(|e| StereoError::format(&l, e.to_string()))?;
            samples.push(s);
        }
        if samples.is_empty() {
            return Err(StereoError::format(dir, "no samples found (expected 00000_left.pfm, ...)"));
        }
        Ok(Self { samples })
    }
}

/// Planar `[C, H, W]` (or `[1, C, H, W]`) tensor to an interleaved PFM image.
pub fn to_pfm(t: &Tensor) -> Result<PfmImage> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(StereoError::pre(format!("cannot store shape {:?} as PFM", t.shape()))),
    };
    let src = t.data();
    let mut data = vec![0f32; c * h * w];
    for ch in 0..c {
        for p in 0..h * w {
            data[p * c + ch] = src[ch * h * w + p];
        }
    }
    PfmImage::new(w, h, c, data)
}

/// Interleaved PFM image to a planar `[C, H, W]` tensor.
pub fn from_pfm(img: &PfmImage) -> Result<Tensor> {
    let (c, h, w) = (img.channels, img.height, img.width);
    let mut data = vec![0f32; c * h * w];
    for ch in 0..c {
        for p in 0..h * w {
            data[ch * h * w + p] = img.data[p * c + ch];
        }
    }
    Ok(Tensor::new(data, &[c, h, w])?)
}
