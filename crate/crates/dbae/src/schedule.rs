//! Variance-preserving noise schedule.
//!
//! The forward process is the SDE
//!
//! ```text
//! dx = f(x, t) dt + g(t) dw,   f(x, t) = -(1/2) beta(t) x,   g(t) = sqrt(beta(t)),
//! ```
//!
//! on `t in [0, T]`. Its transition kernel is Gaussian,
//!
//! ```text
//! x_t | x_0 ~ N(alpha_t x_0, sigma_t^2 I),
//! alpha_t = exp(-(1/2) int_0^t beta(s) ds),   sigma_t = sqrt(1 - alpha_t^2),
//! ```
//!
//! so `alpha_t^2 + sigma_t^2 = 1` for all `t` (variance preserving).
//! The signal-to-noise ratio is `SNR(t) = alpha_t^2 / sigma_t^2` and
//! the bridge math is driven by the ratio
//!
//! ```text
//! R(t) = SNR(T) / SNR(t),
//! ```
//!
//! which increases monotonically from `R(0+) = 0` to `R(T) = 1`.
//!
//! Two beta families are supported: linear interpolation (the data
//! space schedule) and a constant rate (the latent prior schedule).
//! `int beta` is evaluated in closed form; a quadrature fallback
//! exists only as a verification oracle for tests.

use crate::{Error, Result};

/// Noise rate family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    /// `beta(t) = min + (t / T) (max - min)`.
    Linear { min: f64, max: f64 },
    /// `beta(t) = c` for all `t`.
    Constant(f64),
}

/// Variance-preserving schedule on `[0, t_end]`.
#[derive(Debug, Clone, Copy)]
pub struct VpSchedule {
    pub beta: Beta,
    /// Terminal time `T > 0`.
    pub t_end: f64,
    /// Node count for the quadrature oracle (not used by the closed
    /// forms; tests compare the two).
    pub quadrature_steps: usize,
}

impl VpSchedule {
    /// Linear schedule `beta(t) = min + (t/T)(max - min)`.
    pub fn linear(min: f64, max: f64, t_end: f64) -> Result<Self> {
        if !(min > 0.0) || !(max > 0.0) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Domain(format!(
                "beta bounds must be positive and finite, got ({min}, {max})"
            )));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
        }
        Ok(VpSchedule {
            beta: Beta::Linear { min, max },
            t_end,
            quadrature_steps: 10_000,
        })
    }

    /// Constant schedule `beta(t) = c`.
    pub fn constant(c: f64, t_end: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Domain(format!("constant beta must be positive, got {c}")));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
        }
        Ok(VpSchedule {
            beta: Beta::Constant(c),
            t_end,
            quadrature_steps: 10_000,
        })
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t < 0.0 || t > self.t_end {
            return Err(Error::Domain(format!(
                "t = {t} outside schedule domain [0, {}]",
                self.t_end
            )));
        }
        Ok(())
    }

    /// Noise rate `beta(t)`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(match self.beta {
            Beta::Linear { min, max } => min + (t / self.t_end) * (max - min),
            Beta::Constant(c) => c,
        })
    }

    /// Drift `f(x, t) = -(1/2) beta(t) x` and volatility `g(t) = sqrt(beta(t))`.
    pub fn drift_vol(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let b = self.beta(t)?;
        let drift = x.iter().map(|&v| -0.5 * b * v).collect();
        Ok((drift, b.sqrt()))
    }

    /// Closed-form `int_0^t beta(s) ds`.
    pub fn int_beta(&self, t: f64) -> f64 {
        match self.beta {
            Beta::Linear { min, max } => min * t + 0.5 * (max - min) * t * t / self.t_end,
            Beta::Constant(c) => c * t,
        }
    }

    /// Composite-Simpson quadrature of `int_0^t beta(s) ds`.
    ///
    /// Verification oracle only; the closed form above is what the
    /// rest of the crate uses.
    pub fn int_beta_quadrature(&self, t: f64) -> f64 {
        let n = self.quadrature_steps.max(2) & !1; // even node count
        let h = t / n as f64;
        let beta_at = |s: f64| match self.beta {
            Beta::Linear { min, max } => min + (s / self.t_end) * (max - min),
            Beta::Constant(c) => c,
        };
        let mut acc = beta_at(0.0) + beta_at(t);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * beta_at(i as f64 * h);
        }
        acc * h / 3.0
    }

    /// Signal level `alpha_t = exp(-(1/2) int_0^t beta)` and noise
    /// level `sigma_t = sqrt(1 - alpha_t^2)`.
    ///
    /// At `t = 0` this is exactly `(1, 0)`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        self.check_t(t)?;
        if t == 0.0 {
            return Ok((1.0, 0.0));
        }
        let alpha = (-0.5 * self.int_beta(t)).exp();
        let sigma = (1.0 - alpha * alpha).max(0.0).sqrt();
        Ok((alpha, sigma))
    }

    /// SNR ratio `R(t) = SNR(T) / SNR(t)` with `SNR(t) = alpha_t^2 / sigma_t^2`.
    ///
    /// `R` increases from 0 to `R(T) = 1`. `SNR(0)` is infinite, so
    /// `R(0) = 0` is defined by continuous extension rather than
    /// treated as an error.
    pub fn snr_ratio(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        let (a_t, s_t) = self.alpha_sigma(t)?;
        let (a_end, s_end) = self.alpha_sigma(self.t_end)?;
        Ok((a_end * a_end * s_t * s_t) / (s_end * s_end * a_t * a_t))
    }
}
