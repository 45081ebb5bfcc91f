//! Neural-network substrate: dense tensors, a reverse-mode tape, MLPs,
//! and the Adam/EMA optimizer pair.
//!
//! Everything is generic over the scalar type through the [`Real`]
//! trait so the same model and loss code runs in single precision for
//! training and in double precision for high-accuracy gradient and
//! identity checks. Schedule and bridge coefficients are always
//! computed in `f64` and cast once at the point where they enter a
//! tensor expression.

pub mod mlp;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use mlp::{Mlp, MlpVars};
pub use optim::{clip_grads, global_grad_norm, Adam, AdamConfig, Ema};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

/// Sinusoidal time features for a batch of times, laid out as
/// `[sin(w_0 t'), ..., sin(w_{h-1} t'), cos(w_0 t'), ..., cos(w_{h-1} t')]`
/// per row, with `t' = t / t_end` and geometric frequencies
/// `w_k = 1000^(k/(h-1))` starting at the unit frequency (`h = dim/2`).
///
/// At `t = 0` every row is `[0, ..., 0, 1, ..., 1]`.
pub fn time_embed<F: Real>(ts: &[f64], t_end: f64, dim: usize) -> Tensor<F> {
    assert!(dim >= 2 && dim % 2 == 0, "time embedding dim must be even, got {dim}");
    assert!(t_end > 0.0, "time embedding needs a positive horizon");
    let half = dim / 2;
    let mut out = Tensor::zeros(ts.len(), dim);
    for (i, &t) in ts.iter().enumerate() {
        let tn = t / t_end;
        for k in 0..half {
            let w = if half > 1 {
                1000f64.powf(k as f64 / (half - 1) as f64)
            } else {
                1.0
            };
            out.set(i, k, F::from_f64((w * tn).sin()));
            out.set(i, half + k, F::from_f64((w * tn).cos()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_embed_at_zero_is_zeros_then_ones() {
        let e: Tensor<f64> = time_embed(&[0.0], 1.0, 4);
        assert_eq!(e.data, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn time_embed_first_frequency_is_unit() {
        let t = 0.37;
        let e: Tensor<f64> = time_embed(&[t], 1.0, 6);
        assert!((e.get(0, 0) - t.sin()).abs() < 1e-15);
        assert!((e.get(0, 3) - t.cos()).abs() < 1e-15);
    }

    #[test]
    fn time_embed_normalizes_by_horizon() {
        let a: Tensor<f64> = time_embed(&[500.0], 1000.0, 4);
        let b: Tensor<f64> = time_embed(&[0.5], 1.0, 4);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn time_embed_batches_rows_independently() {
        let e: Tensor<f64> = time_embed(&[0.1, 0.9], 1.0, 4);
        let r0: Tensor<f64> = time_embed(&[0.1], 1.0, 4);
        let r1: Tensor<f64> = time_embed(&[0.9], 1.0, 4);
        assert_eq!(e.row(0), &r0.data[..]);
        assert_eq!(e.row(1), &r1.data[..]);
    }
}

/// Floating-point scalar usable in tensors, tapes, and models.
///
/// Implemented for `f32` and `f64`. The conversion methods are exact
/// for `f64` and round-to-nearest for `f32`.
pub trait Real:
    Copy
    + PartialEq
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// One standard normal draw in this precision.
    fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}
