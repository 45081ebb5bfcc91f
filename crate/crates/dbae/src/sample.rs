//! Reverse-time generation.
//!
//! The reverse bridge is integrated from the decoded endpoint back to
//! the data end with either the probability-flow drift
//! `f - (1/2) g^2 s + g^2 h` (Heun or Euler steps) or the reverse SDE
//! drift `f - g^2 s + g^2 h` plus `g dw` noise (Euler-Maruyama). The
//! latent prior is sampled with a deterministic noise-prediction
//! update on a uniform grid. On top of the integrators sit the four
//! user-facing procedures: reconstruct, generate, interpolate, and
//! manipulate.
//!
//! Integration state is kept in double precision regardless of the
//! model precision; network evaluations cast at the boundary. The
//! first reverse node sits at the admissible top of the bridge window
//! with the state set equal to the endpoint, since the pinning term
//! is singular at the horizon itself and the bridge holds the state
//! within a vanishing margin of the endpoint there.

use crate::bridge::BridgeKernel;
use crate::model::{DbaeModel, NfeReport, PriorModel};
use crate::nn::{Real, Tensor};
use crate::rng::Stream;
use crate::schedule::VpSchedule;
use crate::train::ZNorm;
use crate::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    HeunOde,
    EulerOde,
    EulerMaruyamaSde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Uniform,
    /// Quadratic spacing concentrating steps near the data end.
    QuadraticToward0,
}

/// Reverse-pass settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerCfg {
    pub kind: SamplerKind,
    pub steps: usize,
    pub grid: GridKind,
    /// Seeds the noise stream of the SDE kind; the ODE kinds consume
    /// no randomness.
    pub seed: u64,
}

impl Default for SamplerCfg {
    fn default() -> Self {
        SamplerCfg {
            kind: SamplerKind::HeunOde,
            steps: 60,
            grid: GridKind::QuadraticToward0,
            seed: 0,
        }
    }
}

impl SamplerCfg {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least 1 step".into()));
        }
        Ok(())
    }
}

/// Strictly decreasing integration times from the top of the window
/// down to the data end.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(steps: usize, t_lo: f64, t_hi: f64) -> Result<Self> {
        Self::build(steps, t_lo, t_hi, |u| u)
    }

    /// Quadratic spacing: fine near `t_lo`, coarse near `t_hi`.
    pub fn quadratic(steps: usize, t_lo: f64, t_hi: f64) -> Result<Self> {
        Self::build(steps, t_lo, t_hi, |u| u * u)
    }

    fn build(steps: usize, t_lo: f64, t_hi: f64, warp: impl Fn(f64) -> f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least 1 step".into()));
        }
        if !(t_lo >= 0.0 && t_lo < t_hi) {
            return Err(Error::Domain(format!(
                "need 0 <= t_lo < t_hi, got [{t_lo}, {t_hi}]"
            )));
        }
        let nodes = (0..=steps)
            .map(|k| {
                let u = (steps - k) as f64 / steps as f64;
                t_lo + (t_hi - t_lo) * warp(u)
            })
            .collect();
        Ok(TimeGrid { nodes })
    }

    /// Grid over the admissible window of a bridge kernel.
    pub fn for_bridge(cfg: &SamplerCfg, bridge: &BridgeKernel) -> Result<Self> {
        match cfg.grid {
            GridKind::Uniform => Self::uniform(cfg.steps, bridge.t_lo(), bridge.t_hi()),
            GridKind::QuadraticToward0 => {
                Self::quadratic(cfg.steps, bridge.t_lo(), bridge.t_hi())
            }
        }
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Reverse drift at one time for a batch state: `-1/2 beta x` minus
/// `half_factor * beta * s` plus `beta * h`, with `half_factor` 1/2
/// for the probability-flow field and 1 for the reverse SDE.
fn reverse_drift(
    bridge: &BridgeKernel,
    x: &Tensor<f64>,
    t: f64,
    x_end: &Tensor<f64>,
    s: &Tensor<f64>,
    half_factor: f64,
) -> Result<Tensor<f64>> {
    let beta = bridge.schedule.beta(t)?;
    let mut d = Tensor::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let h = bridge.h_transform(x.row(i), t, x_end.row(i))?;
        for j in 0..x.cols {
            let v = -0.5 * beta * x.get(i, j) - half_factor * beta * s.get(i, j)
                + beta * h[j];
            d.set(i, j, v);
        }
    }
    Ok(d)
}

fn check_step_shapes(x: &Tensor<f64>, x_end: &Tensor<f64>, t_hi: f64, t_lo: f64) -> Result<()> {
    if !x.same_shape(x_end) {
        return Err(Error::Shape(format!(
            "state is {}x{}, endpoint is {}x{}",
            x.rows, x.cols, x_end.rows, x_end.cols
        )));
    }
    if !(t_lo < t_hi) {
        return Err(Error::Domain(format!(
            "reverse step needs t_lo < t_hi, got {t_lo} >= {t_hi}"
        )));
    }
    Ok(())
}

/// One reverse step of the probability-flow field from `t_hi` down to
/// `t_lo`. With `heun` set, an explicit trapezoidal corrector follows
/// the Euler predictor (two score evaluations); without it, the plain
/// Euler update (one).
pub fn reverse_ode_step<S>(
    bridge: &BridgeKernel,
    x: &Tensor<f64>,
    t_hi: f64,
    t_lo: f64,
    x_end: &Tensor<f64>,
    heun: bool,
    score: &mut S,
) -> Result<Tensor<f64>>
where
    S: FnMut(&Tensor<f64>, f64) -> Result<Tensor<f64>>,
{
    check_step_shapes(x, x_end, t_hi, t_lo)?;
    bridge.check_admissible(t_hi)?;
    bridge.check_admissible(t_lo)?;
    let dt = t_lo - t_hi;
    let s1 = score(x, t_hi)?;
    let d1 = reverse_drift(bridge, x, t_hi, x_end, &s1, 0.5)?;
    let mut pred = x.clone();
    for k in 0..pred.data.len() {
        pred.data[k] += dt * d1.data[k];
    }
    if !heun {
        return Ok(pred);
    }
    let s2 = score(&pred, t_lo)?;
    let d2 = reverse_drift(bridge, &pred, t_lo, x_end, &s2, 0.5)?;
    let mut out = x.clone();
    for k in 0..out.data.len() {
        out.data[k] += 0.5 * dt * (d1.data[k] + d2.data[k]);
    }
    Ok(out)
}

/// One Euler-Maruyama step of the reverse SDE with explicit noise
/// `eps` (standard normal, same shape as the state).
pub fn reverse_sde_step_with_noise<S>(
    bridge: &BridgeKernel,
    x: &Tensor<f64>,
    t_hi: f64,
    t_lo: f64,
    x_end: &Tensor<f64>,
    eps: &Tensor<f64>,
    score: &mut S,
) -> Result<Tensor<f64>>
where
    S: FnMut(&Tensor<f64>, f64) -> Result<Tensor<f64>>,
{
    check_step_shapes(x, x_end, t_hi, t_lo)?;
    if !eps.same_shape(x) {
        return Err(Error::Shape("noise shape must match the state".into()));
    }
    bridge.check_admissible(t_hi)?;
    bridge.check_admissible(t_lo)?;
    let dt = t_lo - t_hi;
    let s = score(x, t_hi)?;
    let d = reverse_drift(bridge, x, t_hi, x_end, &s, 1.0)?;
    let g = bridge.schedule.beta(t_hi)?.sqrt();
    let noise_scale = g * (t_hi - t_lo).sqrt();
    let mut out = x.clone();
    for k in 0..out.data.len() {
        out.data[k] += dt * d.data[k] + noise_scale * eps.data[k];
    }
    Ok(out)
}

/// One reverse SDE step with noise drawn from the stream.
pub fn reverse_sde_step<S>(
    bridge: &BridgeKernel,
    x: &Tensor<f64>,
    t_hi: f64,
    t_lo: f64,
    x_end: &Tensor<f64>,
    score: &mut S,
    rng: &mut Stream,
) -> Result<Tensor<f64>>
where
    S: FnMut(&Tensor<f64>, f64) -> Result<Tensor<f64>>,
{
    let eps = Tensor::<f64>::randn(x.rows, x.cols, 1.0, rng);
    reverse_sde_step_with_noise(bridge, x, t_hi, t_lo, x_end, &eps, score)
}

/// Integrates the probability-flow field over the whole grid,
/// starting from the endpoint state at the top node. Heun skips the
/// corrector on the final step, so a grid of N steps costs 2N-1 score
/// evaluations (N for plain Euler).
pub fn reverse_ode<S>(
    bridge: &BridgeKernel,
    grid: &TimeGrid,
    x_end: &Tensor<f64>,
    heun: bool,
    mut score: S,
) -> Result<Tensor<f64>>
where
    S: FnMut(&Tensor<f64>, f64) -> Result<Tensor<f64>>,
{
    let n = grid.steps();
    let mut x = x_end.clone();
    for k in 0..n {
        let corrector = heun && k + 1 < n;
        x = reverse_ode_step(
            bridge,
            &x,
            grid.nodes[k],
            grid.nodes[k + 1],
            x_end,
            corrector,
            &mut score,
        )?;
    }
    Ok(x)
}

/// As [`reverse_ode`], recording the state at every node.
pub fn reverse_ode_path<S>(
    bridge: &BridgeKernel,
    grid: &TimeGrid,
    x_end: &Tensor<f64>,
    heun: bool,
    mut score: S,
) -> Result<Vec<(f64, Tensor<f64>)>>
where
    S: FnMut(&Tensor<f64>, f64) -> Result<Tensor<f64>>,
{
    let n = grid.steps();
    let mut x = x_end.clone();
    let mut path = vec![(grid.nodes[0], x.clone())];
    for k in 0..n {
        let corrector = heun && k + 1 < n;
        x = reverse_ode_step(
            bridge,
            &x,
            grid.nodes[k],
            grid.nodes[k + 1],
            x_end,
            corrector,
            &mut score,
        )?;
        path.push((grid.nodes[k + 1], x.clone()));
    }
    Ok(path)
}

/// Integrates the reverse SDE over the whole grid from the endpoint
/// state, drawing one noise block per step.
pub fn reverse_sde<S>(
    bridge: &BridgeKernel,
    grid: &TimeGrid,
    x_end: &Tensor<f64>,
    mut score: S,
    rng: &mut Stream,
) -> Result<Tensor<f64>>
where
    S: FnMut(&Tensor<f64>, f64) -> Result<Tensor<f64>>,
{
    let mut x = x_end.clone();
    for k in 0..grid.steps() {
        x = reverse_sde_step(
            bridge,
            &x,
            grid.nodes[k],
            grid.nodes[k + 1],
            x_end,
            &mut score,
            rng,
        )?;
    }
    Ok(x)
}

/// Deterministic noise-prediction reverse pass for the latent prior
/// on a uniform grid from the horizon to zero: at each node predict
/// the noise, form the implied clean latent, and re-noise it to the
/// next node. The final node is exactly zero, where the update
/// returns the clean prediction itself.
pub fn ddim_reverse<E>(
    schedule: &VpSchedule,
    steps: usize,
    z_init: &Tensor<f64>,
    mut eps_fn: E,
) -> Result<Tensor<f64>>
where
    E: FnMut(&Tensor<f64>, f64) -> Result<Tensor<f64>>,
{
    if steps == 0 {
        return Err(Error::Config("latent reverse pass needs steps >= 1".into()));
    }
    let t_end = schedule.t_end;
    let mut z = z_init.clone();
    for k in 0..steps {
        let t = t_end * (steps - k) as f64 / steps as f64;
        let s = t_end * (steps - k - 1) as f64 / steps as f64;
        let (a_t, s_t) = schedule.alpha_sigma(t)?;
        let (a_s, s_s) = schedule.alpha_sigma(s)?;
        let eps_hat = eps_fn(&z, t)?;
        if !eps_hat.same_shape(&z) {
            return Err(Error::Shape(
                "noise prediction shape must match the latent".into(),
            ));
        }
        for i in 0..z.data.len() {
            let z0 = (z.data[i] - s_t * eps_hat.data[i]) / a_t;
            z.data[i] = a_s * z0 + s_s * eps_hat.data[i];
        }
    }
    Ok(z)
}

/// Trained artifacts needed for inference: the autoencoder bundle
/// (with whatever parameters the caller wants run, typically the EMA
/// shadow), and optionally the latent prior with its normalization
/// statistics.
#[derive(Debug, Clone)]
pub struct Bundle<F: Real> {
    pub model: DbaeModel<F>,
    pub prior: Option<PriorModel<F>>,
    pub z_norm: Option<ZNorm>,
}

impl<F: Real> Bundle<F> {
    pub fn new(model: DbaeModel<F>) -> Self {
        Bundle {
            model,
            prior: None,
            z_norm: None,
        }
    }
}

/// Runs the configured reverse pass from a decoded endpoint, casting
/// network evaluations through the model precision.
fn reverse_with_model<F: Real>(
    model: &DbaeModel<F>,
    x_end: &Tensor<F>,
    z: Option<&Tensor<F>>,
    cfg: &SamplerCfg,
) -> Result<Tensor<F>> {
    cfg.validate()?;
    let grid = TimeGrid::for_bridge(cfg, &model.bridge)?;
    let x64 = x_end.cast::<f64>();
    let score = |x: &Tensor<f64>, t: f64| -> Result<Tensor<f64>> {
        let xf = x.cast::<F>();
        Ok(model.score(&xf, t, x_end, z)?.cast::<f64>())
    };
    let out = match cfg.kind {
        SamplerKind::HeunOde => reverse_ode(&model.bridge, &grid, &x64, true, score)?,
        SamplerKind::EulerOde => reverse_ode(&model.bridge, &grid, &x64, false, score)?,
        SamplerKind::EulerMaruyamaSde => {
            let mut rng = crate::rng::stream_from_seed(cfg.seed);
            reverse_sde(&model.bridge, &grid, &x64, score, &mut rng)?
        }
    };
    Ok(out.cast::<F>())
}

fn z_condition<'a, F: Real>(
    model: &DbaeModel<F>,
    z: &'a Tensor<F>,
) -> Option<&'a Tensor<F>> {
    if model.cfg.use_z_condition {
        Some(z)
    } else {
        None
    }
}

/// Round trip through the information bottleneck: encode to the mean
/// latent, decode the endpoint, and integrate the reverse pass back.
/// With an ODE kind this is a deterministic function of the input.
pub fn reconstruct<F: Real>(
    x0: &Tensor<F>,
    bundle: &Bundle<F>,
    cfg: &SamplerCfg,
) -> Result<Tensor<F>> {
    let m = &bundle.model;
    let z = m.encode_mean(x0)?;
    let x_end = m.decode(&z)?;
    reverse_with_model(m, &x_end, z_condition(m, &z), cfg)
}

/// Draws latents from the trained prior and maps them back to the
/// encoder scale. Errors when the bundle lacks the prior or the
/// normalization statistics.
pub fn sample_latent_prior<F: Real>(
    bundle: &Bundle<F>,
    n: usize,
    steps: usize,
    rng: &mut Stream,
) -> Result<Tensor<F>> {
    let prior = bundle
        .prior
        .as_ref()
        .ok_or_else(|| Error::Contract("bundle has no latent prior".into()))?;
    let zn = bundle
        .z_norm
        .as_ref()
        .ok_or_else(|| Error::Contract("bundle has no latent statistics".into()))?;
    if zn.dim() != prior.cfg.z_dim {
        return Err(Error::Shape(format!(
            "latent statistics dim {} does not match prior dim {}",
            zn.dim(),
            prior.cfg.z_dim
        )));
    }
    let z_t = Tensor::<f64>::randn(n, prior.cfg.z_dim, 1.0, rng);
    let z0 = ddim_reverse(&prior.schedule, steps, &z_t, |z, t| {
        let zf = z.cast::<F>();
        Ok(prior.eps_pred(&zf, t)?.cast::<f64>())
    })?;
    zn.denormalize(&z0.cast::<F>())
}

/// Output of a generation call, with the intermediate latents and
/// endpoint kept for inspection and the evaluation counts split into
/// autoencoder-side calls and latent-prior calls.
#[derive(Debug, Clone)]
pub struct GenerateOut<F> {
    pub x0: Tensor<F>,
    pub x_end: Tensor<F>,
    pub z: Tensor<F>,
    pub nfe: NfeReport,
    pub latent_nfe: u64,
}

/// Decodes given latents and integrates the reverse pass.
pub fn generate_from_z<F: Real>(
    bundle: &Bundle<F>,
    z: &Tensor<F>,
    cfg: &SamplerCfg,
    latent_nfe: u64,
) -> Result<GenerateOut<F>> {
    let m = &bundle.model;
    let before = m.nfe.snapshot();
    let x_end = m.decode(z)?;
    let x0 = reverse_with_model(m, &x_end, z_condition(m, z), cfg)?;
    let after = m.nfe.snapshot();
    Ok(GenerateOut {
        x0,
        x_end,
        z: z.clone(),
        nfe: NfeReport {
            enc: after.enc - before.enc,
            dec: after.dec - before.dec,
            score: after.score - before.score,
        },
        latent_nfe,
    })
}

/// Full unconditional pipeline: prior latents, decode, reverse pass.
pub fn generate<F: Real>(
    bundle: &Bundle<F>,
    n: usize,
    prior_steps: usize,
    cfg: &SamplerCfg,
    rng: &mut Stream,
) -> Result<GenerateOut<F>> {
    let z = sample_latent_prior(bundle, n, prior_steps, rng)?;
    generate_from_z(bundle, &z, cfg, prior_steps as u64)
}

/// Generation with the empirical latent distribution standing in for
/// the prior: resamples rows of an encoded latent bank.
pub fn generate_from_bank<F: Real>(
    bundle: &Bundle<F>,
    bank: &Tensor<F>,
    n: usize,
    cfg: &SamplerCfg,
    rng: &mut Stream,
) -> Result<GenerateOut<F>> {
    if bank.rows == 0 {
        return Err(Error::Data("empty latent bank".into()));
    }
    if bank.cols != bundle.model.cfg.z_dim {
        return Err(Error::Shape(format!(
            "bank width {} does not match latent dim {}",
            bank.cols, bundle.model.cfg.z_dim
        )));
    }
    let mut z = Tensor::zeros(n, bank.cols);
    for i in 0..n {
        let r = rng.random_range(0..bank.rows);
        z.data[i * bank.cols..(i + 1) * bank.cols].copy_from_slice(bank.row(r));
    }
    generate_from_z(bundle, &z, cfg, 0)
}

/// Interpolation output; `extrapolated` marks mixing weights outside
/// `[0, 1]`, which are allowed but worth a warning at the surface.
#[derive(Debug, Clone)]
pub struct Interpolated<F> {
    pub outputs: Vec<Tensor<F>>,
    pub extrapolated: bool,
}

/// Latent-space interpolation: mean-encode both inputs, mix the
/// latents as `lambda za + (1 - lambda) zb` per weight, and decode
/// and reverse each mix. Weight 1 reproduces the reconstruction of
/// `x0_a` exactly, weight 0 that of `x0_b`. One decoder pass per
/// weight.
pub fn interpolate<F: Real>(
    x0_a: &Tensor<F>,
    x0_b: &Tensor<F>,
    lambdas: &[f64],
    bundle: &Bundle<F>,
    cfg: &SamplerCfg,
) -> Result<Interpolated<F>> {
    let m = &bundle.model;
    if !x0_a.same_shape(x0_b) {
        return Err(Error::Shape("interpolation inputs must share a shape".into()));
    }
    let za = m.encode_mean(x0_a)?;
    let zb = m.encode_mean(x0_b)?;
    let extrapolated = lambdas.iter().any(|&l| !(0.0..=1.0).contains(&l));
    let mut outputs = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let mut z = za.clone();
        for k in 0..z.data.len() {
            let v = l * za.data[k].to_f64() + (1.0 - l) * zb.data[k].to_f64();
            z.data[k] = F::from_f64(v);
        }
        let x_end = m.decode(&z)?;
        outputs.push(reverse_with_model(m, &x_end, z_condition(m, &z), cfg)?);
    }
    Ok(Interpolated {
        outputs,
        extrapolated,
    })
}

/// Latent traversal: shift the mean latent along a direction and
/// decode and reverse the result. Strength 0 reproduces the
/// reconstruction exactly.
pub fn manipulate<F: Real>(
    x0: &Tensor<F>,
    direction: &Tensor<F>,
    strength: f64,
    bundle: &Bundle<F>,
    cfg: &SamplerCfg,
) -> Result<Tensor<F>> {
    let m = &bundle.model;
    if direction.rows != 1 || direction.cols != m.cfg.z_dim {
        return Err(Error::Shape(format!(
            "direction must be 1x{}, got {}x{}",
            m.cfg.z_dim, direction.rows, direction.cols
        )));
    }
    let mut z = m.encode_mean(x0)?;
    for i in 0..z.rows {
        for j in 0..z.cols {
            let v = z.get(i, j).to_f64() + strength * direction.get(0, j).to_f64();
            z.set(i, j, F::from_f64(v));
        }
    }
    let x_end = m.decode(&z)?;
    reverse_with_model(m, &x_end, z_condition(m, &z), cfg)
}
