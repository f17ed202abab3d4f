//! Finite-difference cases for the tensor operations. Each case runs five
//! random instances and returns the worst relative error of each.

use anystereo_tensor::gradcheck::{check, probe, DEFAULT_STEP};
use anystereo_tensor::{ops, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-3;
pub const INSTANCES: u64 = 5;

pub type Case = (&'static str, fn() -> Vec<f64>);

pub const CASES: &[Case] = &[
    ("conv2d", conv2d),
    ("conv3d", conv3d),
    ("maxpool2", maxpool),
    ("upsample", upsample),
    ("batch_norm", batch_norm),
    ("elementwise", elementwise),
];

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dims(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(2..=5)).collect()
}

pub fn conv2d() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..INSTANCES)
        .map(|case| {
            let stride = if case % 2 == 0 { 1 } else { 2 };
            let d = dims(&mut rng, 4);
            let x = random(&mut rng, &[d[0].min(2), d[1].min(3), d[2], d[3]]);
            let cout = rng.gen_range(1..=3);
            let w = random(&mut rng, &[cout, x.shape()[1], 3, 3]);
            check(&[x, w], DEFAULT_STEP, |t| probe(&ops::conv2d(&t[0], &t[1], stride)?, case))
                .unwrap()
                .max_rel_error()
        })
        .collect()
}

pub fn conv3d() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..INSTANCES)
        .map(|case| {
            let d = dims(&mut rng, 3);
            let cin = rng.gen_range(1..=2);
            let x = random(&mut rng, &[1, cin, d[0], d[1], d[2]]);
            let cout = rng.gen_range(1..=2);
            let w = random(&mut rng, &[cout, cin, 3, 3, 3]);
            check(&[x, w], DEFAULT_STEP, |t| probe(&ops::conv3d(&t[0], &t[1])?, case))
                .unwrap()
                .max_rel_error()
        })
        .collect()
}

pub fn maxpool() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..INSTANCES)
        .map(|case| {
            let (h, w) = (2 * rng.gen_range(1..=2), 2 * rng.gen_range(1..=2));
            // a shuffled ramp keeps every window winner separated by >= 0.1
            let n = 2 * h * w;
            let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
            for i in (1..n).rev() {
                vals.swap(i, rng.gen_range(0..=i));
            }
            let x = Tensor::new(vals, &[1, 2, h, w]).unwrap();
            check(&[x], DEFAULT_STEP, |t| probe(&ops::maxpool2(&t[0])?, case))
                .unwrap()
                .max_rel_error()
        })
        .collect()
}

pub fn upsample() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..INSTANCES)
        .map(|case| {
            let d = dims(&mut rng, 2);
            let x = random(&mut rng, &[1, 2, d[0], d[1]]);
            let factor = [2, 4][case as usize % 2];
            check(&[x], DEFAULT_STEP, |t| probe(&ops::upsample_bilinear(&t[0], factor)?, case))
                .unwrap()
                .max_rel_error()
        })
        .collect()
}

pub fn batch_norm() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..INSTANCES)
        .map(|case| {
            let d = dims(&mut rng, 3);
            let x = random(&mut rng, &[2, d[0], d[1], d[2]]);
            let c = d[0];
            let gamma = random(&mut rng, &[c]);
            let beta = random(&mut rng, &[c]);
            let train = check(&[x.clone(), gamma.clone(), beta.clone()], DEFAULT_STEP, |t| {
                probe(&ops::batch_norm_train(&t[0], &t[1], &t[2], 1e-5)?.0, case)
            })
            .unwrap();
            let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
            let eval = check(&[x, gamma, beta], DEFAULT_STEP, |t| {
                probe(&ops::batch_norm_eval(&t[0], &t[1], &t[2], &mean, &var, 1e-5)?, case)
            })
            .unwrap();
            train.max_rel_error().max(eval.max_rel_error())
        })
        .collect()
}

pub fn elementwise() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    (0..INSTANCES)
        .map(|case| {
            let d = dims(&mut rng, 3);
            let a = away_from_zero(&mut rng, &d);
            let b = random(&mut rng, &d);
            check(&[a, b], DEFAULT_STEP, |t| {
                let prod = ops::mul(&ops::relu(&t[0]), &t[1])?;
                let s = ops::sub(&ops::add(&prod, &t[1])?, &ops::scale(&t[0], 0.3))?;
                let joined = ops::cat(&[s.clone(), ops::add_scalar(&t[0], 1.0)], 1)?;
                let part = ops::narrow(&joined, 1, 1, d[1])?;
                let flat = ops::reshape(&part, &[part.numel()])?;
                ops::add(&probe(&flat, case)?, &ops::mean(&t[1]))
            })
            .unwrap()
            .max_rel_error()
        })
        .collect()
}
