//! Cost volumes and warping against independent loop oracles and
//! hand-evaluated fixtures. Every check returns a description of the first
//! mismatch it finds.

use anystereo::costvol::{build_full, build_residual, warp_right};
use anystereo::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = (&'static str, fn() -> Result<(), String>);

pub const CHECKS: &[Check] = &[
    ("full volume vs loop oracle", full_volume),
    ("residual volume vs loop oracle", residual_volume),
    ("hand-computed volume rows", hand_rows),
    ("warp fixtures", warp_fixtures),
    ("warp vs interpolation oracle", warp_oracle),
];

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
}

/// `Σ_c |l[b,c,i,j] - r[b,c,i,j-s]|` with zero outside the row, summed over
/// channels in order.
fn oracle(l: &Tensor, r: &Tensor, shifts: &[i64]) -> Vec<f32> {
    let &[b, c, h, w] = l.shape() else { panic!("rank") };
    let mut out = Vec::with_capacity(b * shifts.len() * h * w);
    for bi in 0..b {
        for &s in shifts {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0f32;
                    for ch in 0..c {
                        let x = j as i64 - s;
                        let rv = if (0..w as i64).contains(&x) {
                            r.at(&[bi, ch, i, x as usize])
                        } else {
                            0.0
                        };
                        acc += (l.at(&[bi, ch, i, j]) - rv).abs();
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn compare(got: &[f32], want: &[f32], what: &str) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{what}: {} values, expected {}", got.len(), want.len()));
    }
    match got.iter().zip(want).position(|(a, b)| a != b) {
        Some(k) => Err(format!("{what}: element {k} is {}, oracle gives {}", got[k], want[k])),
        None => Ok(()),
    }
}

fn shapes() -> Vec<[usize; 4]> {
    vec![[1, 1, 1, 3], [1, 2, 3, 5], [2, 4, 8, 8], [2, 3, 5, 7], [1, 4, 8, 8]]
}

pub fn full_volume() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for shape in shapes() {
        let l = random(&mut rng, &shape);
        let r = random(&mut rng, &shape);
        for depth in [1, 3, 12] {
            let cv = build_full(&l, &r, depth).map_err(|e| e.to_string())?;
            let shifts: Vec<i64> = (0..depth as i64).collect();
            compare(cv.values.data(), &oracle(&l, &r, &shifts), &format!("{shape:?} D={depth}"))?;
        }
    }
    Ok(())
}

pub fn residual_volume() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for shape in shapes() {
        let l = random(&mut rng, &shape);
        let r = random(&mut rng, &shape);
        let cv = build_residual(&l, &r).map_err(|e| e.to_string())?;
        if cv.k_offset != -2 || cv.depth() != 5 {
            return Err(format!("residual layout: D={} offset={}", cv.depth(), cv.k_offset));
        }
        compare(cv.values.data(), &oracle(&l, &r, &[-2, -1, 0, 1, 2]), &format!("{shape:?}"))?;
    }
    Ok(())
}

pub fn hand_rows() -> Result<(), String> {
    let row = |v: [f32; 3]| Tensor::new(v.to_vec(), &[1, 1, 1, 3]).unwrap();
    let cv = build_full(&row([1., 2., 3.]), &row([3., 1., 2.]), 2).map_err(|e| e.to_string())?;
    compare(cv.values.data(), &[2., 1., 1., 1., 1., 2.], "rows [1,2,3] vs [3,1,2]")
}

pub fn warp_fixtures() -> Result<(), String> {
    let row = |v: &[f32]| Tensor::new(v.to_vec(), &[1, 1, 1, v.len()]).unwrap();
    let disp = |v: f32, n: usize| Tensor::full(&[1, 1, 1, n], v);
    let run = |f: &Tensor, d: &Tensor| warp_right(f, d).map_err(|e| e.to_string());
    let f = row(&[5., 7., 9.]);
    compare(run(&f, &disp(0.0, 3))?.data(), &[5., 7., 9.], "zero disparity")?;
    compare(run(&f, &disp(1.0, 3))?.data(), &[0., 5., 7.], "unit disparity")?;
    compare(run(&row(&[0., 2.]), &disp(0.5, 2))?.data(), &[0., 1.], "half-pixel disparity")?;
    compare(run(&f, &disp(-1.0, 3))?.data(), &[7., 9., 0.], "negative disparity")?;
    compare(run(&f, &disp(2.25, 3))?.data(), &[0., 0., 3.75], "fractional with padding")?;
    compare(run(&f, &disp(40.0, 3))?.data(), &[0., 0., 0.], "far out of range")?;
    Ok(())
}

pub fn warp_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (b, c, h, w) = (2, 4, 8, 8);
    let f = random(&mut rng, &[b, c, h, w]);
    let d = Tensor::from_fn(&[b, 1, h, w], |_| rng.gen_range(-2.0f32..10.0));
    let got = warp_right(&f, &d).map_err(|e| e.to_string())?;
    for bi in 0..b {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let x = j as f32 - d.at(&[bi, 0, i, j]);
                    let x0 = x.floor();
                    let t = x - x0;
                    let tap = |k: f32| {
                        if k >= 0.0 && k < w as f32 {
                            f.at(&[bi, ch, i, k as usize])
                        } else {
                            0.0
                        }
                    };
                    let want = (1.0 - t) * tap(x0) + t * tap(x0 + 1.0);
                    let have = got.at(&[bi, ch, i, j]);
                    if (have - want).abs() > 1e-6 {
                        return Err(format!("({bi},{ch},{i},{j}): {have} vs {want}"));
                    }
                }
            }
        }
    }
    Ok(())
}
