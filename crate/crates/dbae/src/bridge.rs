//! Closed-form mathematics of the pinned diffusion bridge.
//!
//! Conditioning the variance-preserving forward SDE to hit a
//! prescribed endpoint `y` at time `T` (a Doob h-transform) adds the
//! drift correction
//!
//! ```text
//! h(x_t, t, y) = grad_{x_t} log q(x_T = y | x_t) = (a / v) (y - a x_t),
//! a = alpha_T / alpha_t,   v = sigma_T^2 - a^2 sigma_t^2,
//! ```
//!
//! because the forward transition from `x_t` to `x_T` is
//! `N(a x_t, v I)`. Given both ends, the intermediate state has the
//! Gaussian bridge posterior
//!
//! ```text
//! q(x_t | x_0, x_T) = N(mu_t, sigma_hat_t^2 I),
//! mu_t        = R(t) (alpha_t / alpha_T) x_T + alpha_t (1 - R(t)) x_0,
//! sigma_hat_t = sigma_t sqrt(1 - R(t)),
//! ```
//!
//! with `R(t) = SNR(T) / SNR(t)`. Inverting the posterior mean gives
//! the exact affine map between a score estimate and an `x_0`
//! estimate,
//!
//! ```text
//! x_0 = ca(t) x_t + cb(t) x_T + cg(t) s,
//! ca(t) = 1 / (alpha_t (1 - R)),   cb(t) = -R / (alpha_T (1 - R)),
//! cg(t) = sigma_t^2 / alpha_t,
//! ```
//!
//! and the weight `lambda(t) = g(t)^2 / cg(t)^2 = g^2 alpha_t^2 / sigma_t^4`
//! makes the two loss forms
//!
//! ```text
//! (1/2) g^2 |s - grad log q(x_t|x_0,x_T)|^2 = (1/2) lambda(t) |x0_hat - x_0|^2
//! ```
//!
//! agree exactly, per sample (substituting the affine map shows
//! `s - grad log q = alpha_t (x0_hat - x_0) / sigma_t^2`).
//!
//! All bridge quantities degenerate at the ends (`sigma_hat -> 0`,
//! `v -> 0`), so score-type operations are restricted to the
//! admissible interval `[eps_t T, (1 - eps_t) T]`.

use crate::schedule::VpSchedule;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Default relative margin keeping evaluations away from the singular
/// endpoints.
pub const DEFAULT_EPS_T: f64 = 1e-4;

/// Affine coefficients mapping `(x_t, x_T, score)` to an `x_0`
/// prediction, plus the exact-equality loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct X0Coeffs {
    /// Coefficient on `x_t`: `1 / (alpha_t (1 - R))`.
    pub ca: f64,
    /// Coefficient on `x_T`: `-R / (alpha_T (1 - R))`.
    pub cb: f64,
    /// Coefficient on the score: `sigma_t^2 / alpha_t`.
    pub cg: f64,
    /// Loss weight making the score-residual and x0-residual forms
    /// equal: `lambda = g^2 / cg^2 = g^2 alpha_t^2 / sigma_t^4`.
    pub lambda: f64,
}

/// Pinned-bridge Gaussian kernel over a variance-preserving schedule.
#[derive(Debug, Clone, Copy)]
pub struct BridgeKernel {
    pub schedule: VpSchedule,
    /// Margin as a fraction of `t_end`.
    pub eps_t: f64,
}

impl BridgeKernel {
    pub fn new(schedule: VpSchedule) -> Self {
        BridgeKernel {
            schedule,
            eps_t: DEFAULT_EPS_T,
        }
    }

    pub fn with_margin(schedule: VpSchedule, eps_t: f64) -> Result<Self> {
        if !(eps_t > 0.0) || !(eps_t < 0.5) {
            return Err(Error::Domain(format!(
                "eps_t must lie in (0, 0.5), got {eps_t}"
            )));
        }
        Ok(BridgeKernel { schedule, eps_t })
    }

    /// Lower end of the admissible interval, `eps_t * T`.
    pub fn t_lo(&self) -> f64 {
        self.eps_t * self.schedule.t_end
    }

    /// Upper end of the admissible interval, `(1 - eps_t) * T`.
    pub fn t_hi(&self) -> f64 {
        (1.0 - self.eps_t) * self.schedule.t_end
    }

    /// Rejects times outside the admissible interval.
    pub fn check_admissible(&self, t: f64) -> Result<()> {
        // Tiny slack so grid endpoints computed in floating point do
        // not fall out of their own interval.
        let slack = 1e-12 * self.schedule.t_end;
        if !t.is_finite() || t < self.t_lo() - slack || t > self.t_hi() + slack {
            return Err(Error::Singularity(format!(
                "t = {t} outside admissible bridge interval [{}, {}]",
                self.t_lo(),
                self.t_hi()
            )));
        }
        Ok(())
    }

    /// Forward transition parameters to the terminal time:
    /// `x_T | x_t ~ N(a x_t, v I)` with `a = alpha_T / alpha_t` and
    /// `v = sigma_T^2 - a^2 sigma_t^2`.
    pub fn terminal_kernel(&self, t: f64) -> Result<(f64, f64)> {
        let (a_t, s_t) = self.schedule.alpha_sigma(t)?;
        let (a_end, s_end) = self.schedule.alpha_sigma(self.schedule.t_end)?;
        let a = a_end / a_t;
        let v = s_end * s_end - a * a * s_t * s_t;
        Ok((a, v))
    }

    /// Endpoint-pinning drift correction
    /// `h(x_t, t, y) = (a/v)(y - a x_t)`.
    ///
    /// Only defined strictly inside the admissible interval; `v`
    /// vanishes as `t -> T`.
    pub fn h_transform(&self, x_t: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>> {
        if x_t.len() != y.len() {
            return Err(Error::Shape(format!(
                "x_t has {} entries, y has {}",
                x_t.len(),
                y.len()
            )));
        }
        if t > self.t_hi() + 1e-12 * self.schedule.t_end {
            return Err(Error::Singularity(format!(
                "h-transform at t = {t}: terminal variance vanishes as t -> {}",
                self.schedule.t_end
            )));
        }
        let (a, v) = self.terminal_kernel(t)?;
        if !(v > 0.0) {
            return Err(Error::Singularity(format!(
                "terminal kernel variance {v} not positive at t = {t}"
            )));
        }
        Ok(x_t
            .iter()
            .zip(y)
            .map(|(&xt, &yy)| (a / v) * (yy - a * xt))
            .collect())
    }

    /// Bridge posterior mean and (scalar, isotropic) standard
    /// deviation.
    ///
    /// Endpoints are allowed here: `t = 0` returns `(x_0, 0)` and
    /// `t = T` returns `(x_T, 0)`.
    pub fn bridge_stats(&self, x0: &[f64], x_end: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        if x0.len() != x_end.len() {
            return Err(Error::Shape(format!(
                "x0 has {} entries, x_T has {}",
                x0.len(),
                x_end.len()
            )));
        }
        self.schedule.beta(t)?; // domain check on [0, T]
        let (w0, w_end, sigma_hat) = self.posterior_weights(t)?;
        let mean = x0
            .iter()
            .zip(x_end)
            .map(|(&a, &b)| w0 * a + w_end * b)
            .collect();
        Ok((mean, sigma_hat))
    }

    /// Posterior mean weights `(alpha_t (1-R), R alpha_t / alpha_T)`
    /// and the posterior standard deviation `sigma_t sqrt(1-R)`.
    ///
    /// These scalars are what the tape-based training loss consumes.
    pub fn posterior_weights(&self, t: f64) -> Result<(f64, f64, f64)> {
        let (a_t, s_t) = self.schedule.alpha_sigma(t)?;
        let (a_end, _) = self.schedule.alpha_sigma(self.schedule.t_end)?;
        let r = self.schedule.snr_ratio(t)?;
        let w0 = a_t * (1.0 - r);
        let w_end = r * a_t / a_end;
        let sigma_hat = s_t * (1.0 - r).max(0.0).sqrt();
        Ok((w0, w_end, sigma_hat))
    }

    /// Draws `x_t ~ N(mu_t, sigma_hat_t^2 I)` by reparameterization.
    pub fn sample_bridge<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        x_end: &[f64],
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (mut mean, sigma_hat) = self.bridge_stats(x0, x_end, t)?;
        for m in mean.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *m += sigma_hat * eps;
        }
        Ok(mean)
    }

    /// Analytic conditional score
    /// `grad_{x_t} log q(x_t | x_0, x_T) = (mu_t - x_t) / sigma_hat_t^2`.
    pub fn bridge_score(&self, x_t: &[f64], x0: &[f64], x_end: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_admissible(t)?;
        if x_t.len() != x0.len() {
            return Err(Error::Shape(format!(
                "x_t has {} entries, x0 has {}",
                x_t.len(),
                x0.len()
            )));
        }
        let (mean, sigma_hat) = self.bridge_stats(x0, x_end, t)?;
        if !(sigma_hat > 0.0) {
            return Err(Error::Singularity(format!(
                "bridge deviation vanishes at t = {t}"
            )));
        }
        let inv_var = 1.0 / (sigma_hat * sigma_hat);
        Ok(mean
            .iter()
            .zip(x_t)
            .map(|(&m, &x)| (m - x) * inv_var)
            .collect())
    }

    /// Coefficients of the exact affine map between score and `x_0`
    /// prediction, plus the exact-equality loss weight.
    pub fn x0_coeffs(&self, t: f64) -> Result<X0Coeffs> {
        self.check_admissible(t)?;
        let (a_t, s_t) = self.schedule.alpha_sigma(t)?;
        let (a_end, _) = self.schedule.alpha_sigma(self.schedule.t_end)?;
        let r = self.schedule.snr_ratio(t)?;
        let one_minus_r = 1.0 - r;
        if !(one_minus_r > 0.0) {
            return Err(Error::Singularity(format!(
                "x0 coefficients singular at t = {t} (R -> 1)"
            )));
        }
        let g2 = self.schedule.beta(t)?;
        let cg = s_t * s_t / a_t;
        Ok(X0Coeffs {
            ca: 1.0 / (a_t * one_minus_r),
            cb: -r / (a_end * one_minus_r),
            cg,
            lambda: g2 / (cg * cg),
        })
    }

    /// `x_0` prediction from a score value:
    /// `x0 = ca x_t + cb x_T + cg s`.
    pub fn x0_from_score(&self, x_t: &[f64], t: f64, x_end: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        if x_t.len() != x_end.len() || x_t.len() != s.len() {
            return Err(Error::Shape(format!(
                "x_t/x_T/s lengths differ: {}/{}/{}",
                x_t.len(),
                x_end.len(),
                s.len()
            )));
        }
        let c = self.x0_coeffs(t)?;
        Ok((0..x_t.len())
            .map(|i| c.ca * x_t[i] + c.cb * x_end[i] + c.cg * s[i])
            .collect())
    }

    /// Score implied by an `x_0` prediction; exact inverse of
    /// [`BridgeKernel::x0_from_score`]:
    /// `s = (mu_t(x0_hat, x_T) - x_t) / sigma_hat_t^2`.
    pub fn score_from_x0(
        &self,
        x_t: &[f64],
        t: f64,
        x_end: &[f64],
        x0_hat: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_admissible(t)?;
        self.bridge_score(x_t, x0_hat, x_end, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use rand::Rng;

    fn kernel() -> BridgeKernel {
        BridgeKernel::new(VpSchedule::linear(0.1, 20.0, 1.0).unwrap())
    }

    /// Schedule-free check of the h formula on pinned constants:
    /// alpha_t = 0.9, alpha_T = 0.5, sigma_t^2 = 0.19, sigma_T^2 = 0.75.
    /// Frozen oracle value: h = -a^2/v = -25/56 (direct arithmetic,
    /// cross-checked against central finite differences of
    /// log N(y; a x_t, v) with rel err 3e-11).
    #[test]
    fn h_transform_pinned_example() {
        let a: f64 = 0.5 / 0.9;
        let v = 0.75 - a * a * 0.19;
        let h = (a / v) * (0.0 - a * 1.0);
        assert!((h - (-25.0 / 56.0)).abs() < 1e-14);
        // finite-difference oracle on the log-density
        let logdens = |xt: f64| -0.5 * (2.0 * std::f64::consts::PI * v).ln()
            - (0.0 - a * xt) * (0.0 - a * xt) / (2.0 * v);
        let e = 1e-6;
        let fd = (logdens(1.0 + e) - logdens(1.0 - e)) / (2.0 * e);
        assert!((fd - h).abs() / h.abs() < 1e-8);
    }

    #[test]
    fn h_transform_zero_at_kernel_mean() {
        let k = kernel();
        let t = 0.4;
        let (a, _) = k.terminal_kernel(t).unwrap();
        let x_t = vec![0.7, -1.3, 2.0];
        let y: Vec<f64> = x_t.iter().map(|&x| a * x).collect();
        let h = k.h_transform(&x_t, t, &y).unwrap();
        assert!(h.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn h_transform_matches_finite_differences() {
        // h is the x_t gradient of log N(y; a x_t, v I).
        let k = kernel();
        let mut rng = stream_from_seed(11);
        for &t in &[0.1, 0.35, 0.6, 0.85] {
            let (a, v) = k.terminal_kernel(t).unwrap();
            let x_t: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let h = k.h_transform(&x_t, t, &y).unwrap();
            let logdens = |xs: &[f64]| -> f64 {
                xs.iter()
                    .zip(&y)
                    .map(|(&x, &yy)| {
                        let d = yy - a * x;
                        -0.5 * (2.0 * std::f64::consts::PI * v).ln() - d * d / (2.0 * v)
                    })
                    .sum()
            };
            for i in 0..3 {
                let e = 1e-6;
                let mut xp = x_t.clone();
                let mut xm = x_t.clone();
                xp[i] += e;
                xm[i] -= e;
                let fd = (logdens(&xp) - logdens(&xm)) / (2.0 * e);
                assert!(
                    (fd - h[i]).abs() / h[i].abs().max(1e-6) < 1e-5,
                    "t = {t}, dim {i}: fd {fd} vs h {}",
                    h[i]
                );
            }
        }
    }

    #[test]
    fn h_transform_rejects_terminal_time() {
        let k = kernel();
        let r = k.h_transform(&[1.0], 1.0, &[0.0]);
        assert!(matches!(r, Err(Error::Singularity(_))));
    }

    #[test]
    fn bridge_stats_pins_both_ends() {
        let k = kernel();
        let x0 = vec![0.4, -0.9];
        let x_end = vec![1.5, 0.2];
        let (m0, s0) = k.bridge_stats(&x0, &x_end, 0.0).unwrap();
        assert_eq!(m0, x0);
        assert_eq!(s0, 0.0);
        let (m1, s1) = k.bridge_stats(&x0, &x_end, 1.0).unwrap();
        for (a, b) in m1.iter().zip(&x_end) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(s1.abs() < 1e-9);
    }

    #[test]
    fn bridge_stats_continuous_toward_ends() {
        let k = kernel();
        let x0 = vec![1.0];
        let x_end = vec![-1.0];
        let (m_lo, s_lo) = k.bridge_stats(&x0, &x_end, 1e-6).unwrap();
        assert!((m_lo[0] - 1.0).abs() < 1e-3);
        assert!(s_lo < 1e-2);
        let (m_hi, s_hi) = k.bridge_stats(&x0, &x_end, 1.0 - 1e-6).unwrap();
        assert!((m_hi[0] + 1.0).abs() < 1e-3);
        assert!(s_hi < 1e-2);
    }

    #[test]
    fn sample_bridge_exact_at_ends() {
        let k = kernel();
        let mut rng = stream_from_seed(3);
        let x0 = vec![0.3, 0.7];
        let x_end = vec![-0.2, 1.1];
        let s0 = k.sample_bridge(&x0, &x_end, 0.0, &mut rng).unwrap();
        assert_eq!(s0, x0);
        let s1 = k.sample_bridge(&x0, &x_end, 1.0, &mut rng).unwrap();
        for (a, b) in s1.iter().zip(&x_end) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_bridge_empirical_variance() {
        // Empirical per-dim variance over 1e5 draws matches
        // sigma_hat^2 within 2 percent.
        let k = kernel();
        let mut rng = stream_from_seed(17);
        let x0 = vec![0.5];
        let x_end = vec![-1.0];
        let t = 0.45;
        let (_, sigma_hat) = k.bridge_stats(&x0, &x_end, t).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let s = k.sample_bridge(&x0, &x_end, t, &mut rng).unwrap()[0];
            sum += s;
            sumsq += s * s;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let rel = (var - sigma_hat * sigma_hat).abs() / (sigma_hat * sigma_hat);
        assert!(rel < 0.02, "rel var error {rel}");
    }

    #[test]
    fn bridge_score_zero_at_mean() {
        let k = kernel();
        let x0 = vec![0.2, -0.4];
        let x_end = vec![1.0, 0.5];
        let t = 0.5;
        let (mean, _) = k.bridge_stats(&x0, &x_end, t).unwrap();
        let s = k.bridge_score(&mean, &x0, &x_end, t).unwrap();
        assert!(s.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn bridge_score_zero_mean_reduction() {
        // With x0 = x_end = 0 the posterior mean is 0, so the score
        // is -x_t / sigma_hat^2.
        let k = kernel();
        let t = 0.3;
        let (_, sigma_hat) = k.bridge_stats(&[0.0], &[0.0], t).unwrap();
        let x_t = vec![0.8];
        let s = k.bridge_score(&x_t, &[0.0], &[0.0], t).unwrap();
        assert!((s[0] + 0.8 / (sigma_hat * sigma_hat)).abs() < 1e-12);
    }

    #[test]
    fn bridge_score_matches_finite_differences() {
        let k = kernel();
        let mut rng = stream_from_seed(29);
        for &t in &[0.15, 0.5, 0.8] {
            let x0: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_end: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_t: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (mean, sd) = k.bridge_stats(&x0, &x_end, t).unwrap();
            let score = k.bridge_score(&x_t, &x0, &x_end, t).unwrap();
            let logdens = |xs: &[f64]| -> f64 {
                xs.iter()
                    .zip(&mean)
                    .map(|(&x, &m)| {
                        -0.5 * (2.0 * std::f64::consts::PI * sd * sd).ln()
                            - (x - m) * (x - m) / (2.0 * sd * sd)
                    })
                    .sum()
            };
            for i in 0..2 {
                let e = 1e-6;
                let mut xp = x_t.clone();
                let mut xm = x_t.clone();
                xp[i] += e;
                xm[i] -= e;
                let fd = (logdens(&xp) - logdens(&xm)) / (2.0 * e);
                assert!(
                    (fd - score[i]).abs() / score[i].abs().max(1e-6) < 1e-5,
                    "t = {t} dim {i}"
                );
            }
        }
    }

    #[test]
    fn bridge_score_rejects_degenerate_times() {
        let k = kernel();
        assert!(matches!(
            k.bridge_score(&[0.1], &[0.0], &[1.0], 0.0),
            Err(Error::Singularity(_))
        ));
        assert!(matches!(
            k.bridge_score(&[0.1], &[0.0], &[1.0], 1.0),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn x0_coeffs_invert_posterior_mean() {
        // ca x_t + cb x_T + cg score = x0 exactly, for random inputs.
        let k = kernel();
        let mut rng = stream_from_seed(5);
        for _ in 0..200 {
            let t = rng.random_range(k.t_lo()..k.t_hi());
            let x0: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x_end: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x_t = k.sample_bridge(&x0, &x_end, t, &mut rng).unwrap();
            let s = k.bridge_score(&x_t, &x0, &x_end, t).unwrap();
            let rec = k.x0_from_score(&x_t, t, &x_end, &s).unwrap();
            for (r, x) in rec.iter().zip(&x0) {
                assert!(
                    (r - x).abs() / x.abs().max(1e-9) < 1e-10,
                    "t = {t}: {r} vs {x}"
                );
            }
        }
    }

    #[test]
    fn lambda_times_cg_squared_is_g_squared() {
        let k = kernel();
        let mut rng = stream_from_seed(23);
        for _ in 0..100 {
            let t = rng.random_range(k.t_lo()..k.t_hi());
            let c = k.x0_coeffs(t).unwrap();
            let g2 = k.schedule.beta(t).unwrap();
            assert!(
                (c.lambda * c.cg * c.cg - g2).abs() / g2 < 1e-12,
                "t = {t}"
            );
        }
    }

    #[test]
    fn x0_coeffs_match_primitive_recomputation() {
        // Oracle: rebuild each coefficient from alpha_sigma and
        // snr_ratio at the midpoint of the admissible interval.
        let k = kernel();
        let t = 0.5;
        let c = k.x0_coeffs(t).unwrap();
        let (a_t, s_t) = k.schedule.alpha_sigma(t).unwrap();
        let (a_end, _) = k.schedule.alpha_sigma(1.0).unwrap();
        let r = k.schedule.snr_ratio(t).unwrap();
        assert!((c.ca - 1.0 / (a_t * (1.0 - r))).abs() < 1e-12);
        assert!((c.cb + r / (a_end * (1.0 - r))).abs() < 1e-12);
        assert!((c.cg - s_t * s_t / a_t).abs() < 1e-12);
        let g2 = k.schedule.beta(t).unwrap();
        assert!((c.lambda - g2 * a_t * a_t / (s_t * s_t * s_t * s_t)).abs() < 1e-9);
    }

    #[test]
    fn x0_from_score_linearity_in_score() {
        let k = kernel();
        let t = 0.6;
        let x_t = vec![0.2, -0.7];
        let x_end = vec![0.9, 0.1];
        let s = vec![0.5, -1.0];
        let delta = vec![0.01, -0.03];
        let base = k.x0_from_score(&x_t, t, &x_end, &s).unwrap();
        let s2: Vec<f64> = s.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let shifted = k.x0_from_score(&x_t, t, &x_end, &s2).unwrap();
        let c = k.x0_coeffs(t).unwrap();
        for i in 0..2 {
            assert!((shifted[i] - base[i] - c.cg * delta[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_point_consistency() {
        // With x0 = 0 the posterior mean is mu = cbw * x_T; feeding
        // that x_t and a zero score must return x0 = 0.
        let k = kernel();
        let t = 0.4;
        let x_end = vec![1.3, -0.6];
        let (mu, _) = k.bridge_stats(&[0.0, 0.0], &x_end, t).unwrap();
        let rec = k.x0_from_score(&mu, t, &x_end, &[0.0, 0.0]).unwrap();
        assert!(rec.iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn score_x0_round_trips() {
        let k = kernel();
        let mut rng = stream_from_seed(41);
        for _ in 0..200 {
            let t = rng.random_range(k.t_lo()..k.t_hi());
            let x_t: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x_end: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x0h = k.x0_from_score(&x_t, t, &x_end, &s).unwrap();
            let s2 = k.score_from_x0(&x_t, t, &x_end, &x0h).unwrap();
            for (a, b) in s.iter().zip(&s2) {
                assert!((a - b).abs() / a.abs().max(1e-9) < 1e-10);
            }
            // and the other direction
            let x0b = k.x0_from_score(&x_t, t, &x_end, &s2).unwrap();
            for (a, b) in x0h.iter().zip(&x0b) {
                assert!((a - b).abs() / a.abs().max(1e-9) < 1e-10);
            }
        }
    }

    #[test]
    fn score_from_true_x0_is_bridge_score() {
        let k = kernel();
        let mut rng = stream_from_seed(53);
        let t = 0.55;
        let x0 = vec![0.4, -1.1];
        let x_end = vec![-0.3, 0.8];
        let x_t = k.sample_bridge(&x0, &x_end, t, &mut rng).unwrap();
        let a = k.score_from_x0(&x_t, t, &x_end, &x0).unwrap();
        let b = k.bridge_score(&x_t, &x0, &x_end, t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn score_from_x0_zero_at_implied_mean() {
        let k = kernel();
        let t = 0.35;
        let x0_hat = vec![0.6, 0.1];
        let x_end = vec![-0.2, 0.9];
        let (mu, _) = k.bridge_stats(&x0_hat, &x_end, t).unwrap();
        let s = k.score_from_x0(&mu, t, &x_end, &x0_hat).unwrap();
        assert!(s.iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let k = kernel();
        assert!(matches!(
            k.h_transform(&[1.0, 2.0], 0.5, &[1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            k.bridge_stats(&[1.0], &[1.0, 2.0], 0.5),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            k.x0_from_score(&[1.0], 0.5, &[1.0], &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    /// Monte Carlo marginal check: Euler-Maruyama simulation of the
    /// pinned forward SDE dx = [f + g^2 h] dt + g dw from x0 matches
    /// the closed-form posterior at an interior time. A reduced-size
    /// version of the acceptance oracle (which uses 1e4 paths).
    #[test]
    fn euler_maruyama_marginal_matches_closed_form() {
        let k = kernel();
        let mut rng = stream_from_seed(101);
        let x0 = -0.7;
        let x_end = 1.1;
        let t_star = 0.5;
        let paths = 2000;
        let steps = 400;
        let dt = t_star / steps as f64;
        let mut xs = vec![x0; paths];
        let mut t = 0.0;
        for _ in 0..steps {
            let b = k.schedule.beta(t).unwrap();
            let (a, v) = k.terminal_kernel(t).unwrap();
            for x in xs.iter_mut() {
                let h = (a / v) * (x_end - a * *x);
                let eps: f64 = rng.sample(StandardNormal);
                *x += dt * (-0.5 * b * *x + b * h) + (b * dt).sqrt() * eps;
            }
            t += dt;
        }
        let n = paths as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let (mu, sd) = k.bridge_stats(&[x0], &[x_end], t_star).unwrap();
        let se = sd / n.sqrt();
        assert!(
            (mean - mu[0]).abs() < 3.0 * se,
            "mean {mean} vs {} (3se = {})",
            mu[0],
            3.0 * se
        );
        assert!(
            (var - sd * sd).abs() / (sd * sd) < 0.08,
            "var {var} vs {}",
            sd * sd
        );
    }
}
