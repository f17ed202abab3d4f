//! Adam with bias correction.

use crate::autograd::Gradients;
use crate::error::{mismatch, Result};
use crate::nn::Param;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One in-place Adam update of `param`.
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if param.len() != grad.len() {
        return Err(mismatch("adam_step", "gradient length", param.len(), grad.len()));
    }
    if state.m.len() != param.len() {
        *state = AdamState::new(param.len());
    }
    state.t += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(state.t as i32));
    let c2 = T::lit(1.0 - cfg.beta2.powi(state.t as i32));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    for (((p, g), m), v) in param.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (T::one() - b1) * *g;
        *v = b2 * *v + (T::one() - b2) * *g * *g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a fixed, ordered list of trainable parameters.
#[derive(Debug, Clone)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Parameters missing from `grads` get a zero gradient (their moments
    /// still decay).
    pub fn step(&mut self, params: &[&Param<T>], grads: &Gradients<T>) -> Result<()> {
        if self.states.len() != params.len() {
            self.states = params.iter().map(|p| AdamState::new(p.numel())).collect();
        }
        for (p, state) in params.iter().zip(&mut self.states) {
            let g = grads.get_or_zeros(&p.leaf());
            let mut values = p.to_vec();
            adam_step(&mut values, &g, state, &self.config)?;
            p.set(values)?;
        }
        Ok(())
    }
}
