//! Adam with bias correction, exponential moving average of
//! parameters, and global-norm gradient clipping.
//!
//! Optimizer state is part of the training state machine: both
//! moments are serialized into checkpoints so a resumed run replays
//! the exact update sequence of an uninterrupted one.

use super::tensor::Tensor;
use super::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state over a flat parameter list. The caller supplies
/// parameters and gradients in the same order every step.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig, params: &[&Tensor<F>]) -> Self {
        Adam {
            cfg,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
        }
    }

    /// One update: `m, v` decay toward the gradient statistics, the
    /// bias-corrected ratio moves the parameters.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one = F::ONE;
        let bc1 = F::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2 = F::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));
        let lr = F::from_f64(self.cfg.lr);
        let eps = F::from_f64(self.cfg.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert!(p.same_shape(g), "gradient shape mismatch");
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (one - b1) * gk;
                v.data[k] = b2 * v.data[k] + (one - b2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Euclidean norm over all gradient entries, accumulated in `f64`.
pub fn global_grad_norm<F: Real>(grads: &[Tensor<F>]) -> f64 {
    grads.iter().map(|g| g.sq_sum()).sum::<f64>().sqrt()
}

/// Scales all gradients down so their global norm is at most
/// `max_norm`; returns the pre-clip norm.
pub fn clip_grads<F: Real>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = F::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Exponential moving average of a flat parameter list:
/// `shadow = decay * shadow + (1 - decay) * param`.
#[derive(Debug, Clone)]
pub struct Ema<F> {
    pub decay: f64,
    pub shadow: Vec<Tensor<F>>,
}

impl<F: Real> Ema<F> {
    pub fn new(decay: f64, params: &[&Tensor<F>]) -> Self {
        assert!((0.0..1.0).contains(&decay), "EMA decay must lie in [0, 1)");
        Ema {
            decay,
            shadow: params.iter().map(|&p| p.clone()).collect(),
        }
    }

    pub fn update(&mut self, params: &[&Tensor<F>]) {
        assert_eq!(params.len(), self.shadow.len(), "parameter count changed");
        let d = F::from_f64(self.decay);
        let omd = F::from_f64(1.0 - self.decay);
        for (s, p) in self.shadow.iter_mut().zip(params) {
            for (sk, &pk) in s.data.iter_mut().zip(&p.data) {
                *sk = d * *sk + omd * pk;
            }
        }
    }
}
