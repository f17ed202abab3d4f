//! Finite-difference cases for the stereo-specific differentiable
//! operations. Each case runs five random instances and returns the worst
//! relative error of each. Inputs are drawn so that no instance sits
//! within the step size of an |x| kink.

use anystereo::costvol::{build_full, build_residual, warp_right, CostVolume, VolumeKind};
use anystereo::dispnet::soft_argmin;
use anystereo::loss::{masked_smooth_l1, multi_stage_loss, LossWeights};
use anystereo::spn::{normalize_affinity, propagate_directions, Direction};
use anystereo::tensor::gradcheck::{check, probe, DEFAULT_STEP};
use anystereo::tensor::{ops, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-3;
pub const INSTANCES: u64 = 5;

pub type Case = (&'static str, fn() -> Vec<f64>);

pub const CASES: &[Case] = &[
    ("warp_right", warp),
    ("soft_argmin", soft_argmin_case),
    ("build_full", cost_full),
    ("build_residual", cost_residual),
    ("propagate", propagation),
    ("normalize_affinity", normalization),
    ("stage_loss", loss),
    ("residual_stage", residual_stage),
    ("refinement_stage", refinement_stage),
];

fn lift<T>(r: anystereo::Result<T>) -> Result<T, TensorError> {
    r.map_err(|e| TensorError::Invalid {
        op: "stereo",
        msg: e.to_string(),
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Values on the lattice `0.1 n + phase`, so two lattices with different
/// phases never produce a difference near zero.
fn lattice(rng: &mut ChaCha8Rng, shape: &[usize], phase: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-10i32..10) as f64 * 0.1 + phase)
}

/// Disparities whose fractional part stays inside `[0.1, 0.9]`.
fn fractional_disparity(rng: &mut ChaCha8Rng, shape: &[usize], max: i32) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1..=max) as f64 + rng.gen_range(0.1..0.9))
}

fn small_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(2..=4),
        rng.gen_range(3..=5),
    )
}

pub fn warp() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..INSTANCES)
        .map(|case| {
            let (b, c, h, w) = small_dims(&mut rng);
            let f = random(&mut rng, &[b, c, h, w]);
            let d = fractional_disparity(&mut rng, &[b, 1, h, w], 3);
            check(&[f, d], DEFAULT_STEP, |t| probe(&lift(warp_right(&t[0], &t[1]))?, case))
                .unwrap()
                .max_rel_error()
        })
        .collect()
}

pub fn soft_argmin_case() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    (0..INSTANCES)
        .map(|case| {
            let (b, _, h, w) = small_dims(&mut rng);
            let d = rng.gen_range(1..=5);
            let offset = if case % 2 == 0 { 0 } else { -2 };
            let c = Tensor::from_fn(&[b, d, h, w], |_| rng.gen_range(-2.0..2.0));
            check(&[c], DEFAULT_STEP, |t| {
                let cv = CostVolume {
                    values: t[0].clone(),
                    kind: VolumeKind::Full,
                    k_offset: offset,
                };
                probe(&lift(soft_argmin(&cv))?, case)
            })
            .unwrap()
            .max_rel_error()
        })
        .collect()
}

pub fn cost_full() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    (0..INSTANCES)
        .map(|case| {
            let (b, c, h, w) = small_dims(&mut rng);
            let l = lattice(&mut rng, &[b, c, h, w], 0.03);
            let r = lattice(&mut rng, &[b, c, h, w], 0.08);
            let depth = rng.gen_range(1..=4);
            check(&[l, r], DEFAULT_STEP, |t| {
                probe(&lift(build_full(&t[0], &t[1], depth))?.values, case)
            })
            .unwrap()
            .max_rel_error()
        })
        .collect()
}

pub fn cost_residual() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    (0..INSTANCES)
        .map(|case| {
            let (b, c, h, w) = small_dims(&mut rng);
            let l = lattice(&mut rng, &[b, c, h, w], 0.03);
            let r = lattice(&mut rng, &[b, c, h, w], 0.08);
            check(&[l, r], DEFAULT_STEP, |t| {
                probe(&lift(build_residual(&t[0], &t[1]))?.values, case)
            })
            .unwrap()
            .max_rel_error()
        })
        .collect()
}

/// Normalized affinity with every weight at least 0.05 away from zero.
fn stable_affinity(rng: &mut ChaCha8Rng, b: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[b, 3 * c, h, w], |_| signed(rng, 0.05, 0.3))
}

pub fn propagation() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    (0..INSTANCES)
        .map(|case| {
            let (b, c, h, w) = small_dims(&mut rng);
            let x = random(&mut rng, &[b, c, h, w]);
            let a = stable_affinity(&mut rng, b, c, h, w);
            let dirs: &[Direction] = if case == 0 {
                &[Direction::LeftToRight]
            } else {
                &Direction::ALL
            };
            check(&[x, a], DEFAULT_STEP, |t| {
                probe(&lift(propagate_directions(&t[0], &t[1], dirs))?, case)
            })
            .unwrap()
            .max_rel_error()
        })
        .collect()
}

pub fn normalization() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    (0..INSTANCES)
        .map(|case| {
            let (b, c, h, w) = small_dims(&mut rng);
            // Alternate triples that need rescaling with ones that do not.
            let raw = Tensor::from_fn(&[b, 3 * c, h, w], |i| {
                if (i / (h * w) / 3) % 2 == 0 {
                    signed(&mut rng, 0.5, 1.5)
                } else {
                    signed(&mut rng, 0.02, 0.25)
                }
            });
            check(&[raw], DEFAULT_STEP, |t| probe(&lift(normalize_affinity(&t[0]))?, case))
                .unwrap()
                .max_rel_error()
        })
        .collect()
}

pub fn loss() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    (0..INSTANCES)
        .map(|_| {
            let (b, _, h, w) = small_dims(&mut rng);
            let shape = [b, 1, h, w];
            let gt = Tensor::from_fn(&shape, |_| rng.gen_range(0.0..10.0));
            let mask = Tensor::from_fn(&shape, |i| if i % 3 == 2 { 0.0 } else { 1.0 });
            // Errors avoid the kinks at 0 and ±1.
            let preds: Vec<Tensor<f64>> = (0..4)
                .map(|_| {
                    Tensor::from_fn(&shape, |i| {
                        let e = if rng.gen_bool(0.5) {
                            signed(&mut rng, 0.1, 0.9)
                        } else {
                            signed(&mut rng, 1.1, 3.0)
                        };
                        gt.data()[i] + e
                    })
                })
                .collect();
            let single = check(&preds[..1], DEFAULT_STEP, |t| lift(masked_smooth_l1(&t[0], &gt, &mask)))
                .unwrap()
                .max_rel_error();
            let joint = check(&preds, DEFAULT_STEP, |t| {
                lift(multi_stage_loss(t, &gt, &mask, &LossWeights::default()))
            })
            .unwrap()
            .max_rel_error();
            single.max(joint)
        })
        .collect()
}

/// Warp, residual volume, soft-argmin and residual addition composed the
/// way stages 2 and 3 use them.
pub fn residual_stage() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    (0..INSTANCES)
        .map(|case| {
            let (b, c, h, w) = small_dims(&mut rng);
            let l = random(&mut rng, &[b, c, h, w]);
            let r = random(&mut rng, &[b, c, h, w]);
            let d = fractional_disparity(&mut rng, &[b, 1, h, w], 2);
            // Keep |l - warped| away from zero by offsetting the left features.
            let l = ops::add_scalar(&l, 3.0);
            check(&[l, r, d], DEFAULT_STEP, |t| {
                let warped = lift(warp_right(&t[1], &t[2]))?;
                let cv = lift(build_residual(&t[0], &warped))?;
                let res = lift(soft_argmin(&cv))?;
                probe(&ops::add(&t[2], &res)?, case)
            })
            .unwrap()
            .max_rel_error()
        })
        .collect()
}

/// Affinity normalization, propagation, the 1-channel projection and the
/// residual addition, as in stage 4.
pub fn refinement_stage() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    (0..INSTANCES)
        .map(|case| {
            let (b, _, h, w) = small_dims(&mut rng);
            let c = 2;
            let emb = random(&mut rng, &[b, c, h, w]);
            let raw = Tensor::from_fn(&[b, 3 * c, h, w], |_| signed(&mut rng, 0.4, 0.8));
            let proj = random(&mut rng, &[1, c, 3, 3]);
            let d3 = random(&mut rng, &[b, 1, h, w]);
            check(&[emb, raw, proj, d3], DEFAULT_STEP, |t| {
                let aff = lift(normalize_affinity(&t[1]))?;
                let p = lift(propagate_directions(&t[0], &aff, &Direction::ALL))?;
                let out = ops::add(&t[3], &ops::conv2d(&p, &t[2], 1)?)?;
                probe(&out, case)
            })
            .unwrap()
            .max_rel_error()
        })
        .collect()
}
