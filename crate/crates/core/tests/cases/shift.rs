//! Stage-1 matching on raw pixels: for a pair whose right view is the left
//! view shifted by a uniform integer disparity, the per-pixel argmin of the
//! full cost volume should recover the shift.

use anystereo::costvol::build_full;
use anystereo::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEPTH: usize = 12;
pub const MAX_SHIFT: usize = 10;

/// `[1, 3, h, w]` noise and the same content shifted left by `s`, so that
/// `left[j] = right[j - s]`, drawn from a wider canvas.
pub fn shifted_pair(h: usize, w: usize, s: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cw = w + s;
    let canvas: Vec<f32> = (0..3 * h * cw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let view = |offset: usize| {
        Tensor::from_fn(&[1, 3, h, w], |k| {
            let (c, i, j) = (k / (h * w), (k / w) % h, k % w);
            canvas[(c * h + i) * cw + j + offset]
        })
    };
    (view(0), view(s))
}

/// Fraction of interior pixels (`j >= DEPTH`) whose argmin equals `s`.
pub fn recovery_rate(s: usize, seed: u64) -> f64 {
    let (h, w) = (16, 64);
    let (l, r) = shifted_pair(h, w, s, seed);
    let cv = build_full(&l, &r, DEPTH).expect("volume");
    let v = cv.values.data();
    let mut hits = 0;
    let mut total = 0;
    for i in 0..h {
        for j in DEPTH..w {
            let best = (0..DEPTH)
                .min_by(|&a, &b| v[(a * h + i) * w + j].total_cmp(&v[(b * h + i) * w + j]))
                .expect("candidates");
            hits += usize::from(best == s);
            total += 1;
        }
    }
    hits as f64 / total as f64
}

/// Worst recovery rate over shifts `0..=MAX_SHIFT`.
pub fn worst_rate() -> (usize, f64) {
    (0..=MAX_SHIFT)
        .map(|s| (s, recovery_rate(s, 100 + s as u64)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("shifts")
}
