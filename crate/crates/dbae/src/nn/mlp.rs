//! Fully-connected networks with SiLU activations between layers and
//! a linear final layer.
//!
//! Each MLP exists in two execution modes that share the same kernels
//! and therefore produce bitwise-identical outputs: a plain forward
//! pass for inference, and a taped pass ([`MlpVars::apply`]) whose
//! parameters participate in reverse-mode differentiation.

use super::tape::{Tape, Var};
use super::tensor::{add_bias, matmul, silu, Tensor};
use super::Real;
use rand::Rng;

/// Dense network `sizes[0] -> sizes[1] -> ... -> sizes.last()`.
#[derive(Debug, Clone)]
pub struct Mlp<F> {
    pub weights: Vec<Tensor<F>>,
    pub biases: Vec<Tensor<F>>,
}

impl<F: Real> Mlp<F> {
    /// Initializes weights `N(0, 1/fan_in)` and zero biases. Draws
    /// happen layer by layer (weights then bias), in `f64`, so a
    /// given seed produces the same underlying values in either
    /// precision.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            weights.push(Tensor::randn(fan_in, fan_out, std, rng));
            biases.push(Tensor::zeros(1, fan_out));
        }
        Mlp { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().cols
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.data.len()).sum::<usize>()
    }

    /// Inference pass on an `n x input_dim` batch.
    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        assert_eq!(
            x.cols,
            self.input_dim(),
            "forward: input width {} vs {}",
            x.cols,
            self.input_dim()
        );
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = add_bias(&matmul(&h, w), b);
            if i < last {
                h = silu(&h);
            }
        }
        h
    }

    /// Registers all parameters on a tape. With `grad` false the
    /// network runs under the tape but takes no parameter gradients
    /// (used when only inputs are differentiated).
    pub fn vars(&self, tape: &mut Tape<F>, grad: bool) -> MlpVars {
        let reg = |tape: &mut Tape<F>, t: &Tensor<F>| {
            if grad {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        MlpVars {
            weights: self.weights.iter().map(|w| reg(tape, w)).collect(),
            biases: self.biases.iter().map(|b| reg(tape, b)).collect(),
        }
    }

    /// Flat parameter view in checkpoint order: per layer, weight
    /// then bias.
    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Tape handles for one MLP's parameters.
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Taped forward pass, structurally identical to
    /// [`Mlp::forward`].
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Var {
        let last = self.weights.len() - 1;
        let mut h = x;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = tape.matmul(h, *w);
            h = tape.add_bias(h, *b);
            if i < last {
                h = tape.silu(h);
            }
        }
        h
    }

    /// Gradient handles in the same order as [`Mlp::tensors`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}
