//! Central finite-difference gradient checks in double precision.

use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input.
    pub rel_errors: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `h`, for every input.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().into_leaf()).collect();
    let grads = f(&leaves)?.backward()?;
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        let mut numeric = vec![0.0; leaf.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let perturbed: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == k {
                            let mut d = t.to_vec();
                            d[i] += delta;
                            Tensor::new(d, t.shape())
                        } else {
                            Ok(t.detach())
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(f(&perturbed)?.item().unwrap_or(f64::NAN))
            };
            *slot = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
        rel_errors.push(rel_error(&analytic, &numeric));
    }
    Ok(GradReport { rel_errors })
}

/// Fixed pseudo-random weights for a scalar probe `sum(w ⊙ y)`, so that
/// every output element contributes a distinct gradient.
pub fn probe_weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// `sum(w ⊙ y)` with [`probe_weights`].
pub fn probe(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = probe_weights(y.shape(), seed);
    Ok(crate::ops::sum(&crate::ops::mul(y, &w)?))
}
