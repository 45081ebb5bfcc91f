//! The three learnable components and their composition: an encoder
//! producing the latent `z`, a decoder mapping `z` to the diffusion
//! endpoint `xT`, and a score network in the pred-x parameterization.
//!
//! The decoder is deterministic and takes nothing but `z`, so at
//! inference the latent is the sole information bottleneck: one
//! encoder pass and one decoder pass produce the endpoint with zero
//! score-network evaluations. The score network predicts `x0` from
//! `(x_t, xT, t [, z])` and is converted to a score through the exact
//! affine bridge identity, so score-based and prediction-based views
//! are interchangeable everywhere.
//!
//! Every forward pass exists in two bitwise-identical modes: a plain
//! pass for inference and a taped pass for training (see
//! [`ModelVars`]). This file also hosts the latent prior network used
//! for unconditional generation.

use crate::bridge::BridgeKernel;
use crate::nn::{time_embed, Mlp, MlpVars, Real, Tape, Tensor, Var};
use crate::rng::Stream;
use crate::schedule::VpSchedule;
use crate::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};

/// Lower bound of the Gaussian encoder's deviation output.
pub const SIGMA_Z_LO: f64 = 1e-4;
/// Upper bound of the Gaussian encoder's deviation output.
pub const SIGMA_Z_HI: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// `z = net(x0)`.
    Deterministic,
    /// `z = mu + sigma * eps` with learned moments and bounded
    /// deviation `sigma in (SIGMA_Z_LO, SIGMA_Z_HI)`.
    Gaussian,
}

/// Architecture of the full autoencoder bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCfg {
    pub x_dim: usize,
    pub z_dim: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub score_hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub encoder_mode: EncoderMode,
    /// Condition the score network on `z` in addition to `xT`.
    pub use_z_condition: bool,
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg {
            x_dim: 2,
            z_dim: 2,
            enc_hidden: vec![64, 64],
            dec_hidden: vec![64, 64],
            score_hidden: vec![128, 128],
            time_embed_dim: 16,
            encoder_mode: EncoderMode::Gaussian,
            use_z_condition: true,
        }
    }
}

impl ModelCfg {
    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.z_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.z_dim > self.x_dim {
            return Err(Error::Config(format!(
                "latent dim {} exceeds data dim {}; the latent must compress",
                self.z_dim, self.x_dim
            )));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dim must be even and >= 2, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    fn enc_sizes(&self) -> Vec<usize> {
        let out = match self.encoder_mode {
            EncoderMode::Deterministic => self.z_dim,
            EncoderMode::Gaussian => 2 * self.z_dim,
        };
        let mut s = vec![self.x_dim];
        s.extend_from_slice(&self.enc_hidden);
        s.push(out);
        s
    }

    fn dec_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.z_dim];
        s.extend_from_slice(&self.dec_hidden);
        s.push(self.x_dim);
        s
    }

    fn score_sizes(&self) -> Vec<usize> {
        let mut input = 2 * self.x_dim + self.time_embed_dim;
        if self.use_z_condition {
            input += self.z_dim;
        }
        let mut s = vec![input];
        s.extend_from_slice(&self.score_hidden);
        s.push(self.x_dim);
        s
    }
}

/// Forward-pass counters for cost accounting (encoder, decoder, and
/// score-network evaluations). Shared references may bump them, so
/// they are atomics; ordering is relaxed because they are pure
/// counters.
#[derive(Debug, Default)]
pub struct NfeCounters {
    enc: AtomicU64,
    dec: AtomicU64,
    score: AtomicU64,
}

/// Point-in-time copy of the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NfeReport {
    pub enc: u64,
    pub dec: u64,
    pub score: u64,
}

impl NfeCounters {
    pub fn reset(&self) {
        self.enc.store(0, Ordering::Relaxed);
        self.dec.store(0, Ordering::Relaxed);
        self.score.store(0, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> NfeReport {
        NfeReport {
            enc: self.enc.load(Ordering::Relaxed),
            dec: self.dec.load(Ordering::Relaxed),
            score: self.score.load(Ordering::Relaxed),
        }
    }
}

impl Clone for NfeCounters {
    fn clone(&self) -> Self {
        let s = self.snapshot();
        NfeCounters {
            enc: AtomicU64::new(s.enc),
            dec: AtomicU64::new(s.dec),
            score: AtomicU64::new(s.score),
        }
    }
}

/// Encoder output: the latent draw plus, in Gaussian mode, the
/// `(mu, sigma)` moments it was drawn from.
#[derive(Debug, Clone)]
pub struct Encoded<F> {
    pub z: Tensor<F>,
    pub moments: Option<(Tensor<F>, Tensor<F>)>,
}

/// Encoder, decoder, and score network over one bridge kernel.
#[derive(Debug, Clone)]
pub struct DbaeModel<F> {
    pub cfg: ModelCfg,
    pub bridge: BridgeKernel,
    pub encoder: Mlp<F>,
    pub decoder: Mlp<F>,
    pub score_net: Mlp<F>,
    pub nfe: NfeCounters,
}

impl<F: Real> DbaeModel<F> {
    /// Builds freshly initialized networks. Parameter draws happen in
    /// a fixed order (encoder, decoder, score network), so a seed
    /// pins the full initialization.
    pub fn new(cfg: ModelCfg, bridge: BridgeKernel, rng: &mut Stream) -> Result<Self> {
        cfg.validate()?;
        let encoder = Mlp::new(&cfg.enc_sizes(), rng);
        let decoder = Mlp::new(&cfg.dec_sizes(), rng);
        let score_net = Mlp::new(&cfg.score_sizes(), rng);
        Ok(DbaeModel {
            cfg,
            bridge,
            encoder,
            decoder,
            score_net,
            nfe: NfeCounters::default(),
        })
    }

    fn check_width(&self, t: &Tensor<F>, want: usize, what: &str) -> Result<()> {
        if t.cols != want {
            return Err(Error::Shape(format!(
                "{what} width {} does not match expected {want}",
                t.cols
            )));
        }
        Ok(())
    }

    /// Splits the raw Gaussian-encoder output into `(mu, sigma)` with
    /// the bounded deviation `sigma = lo + (hi - lo) * logistic(raw)`.
    fn gaussian_moments(&self, out: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let l = self.cfg.z_dim;
        let mut mu = Tensor::zeros(out.rows, l);
        let mut raw = Tensor::zeros(out.rows, l);
        for i in 0..out.rows {
            mu.data[i * l..(i + 1) * l].copy_from_slice(&out.row(i)[..l]);
            raw.data[i * l..(i + 1) * l].copy_from_slice(&out.row(i)[l..]);
        }
        let lo = F::from_f64(SIGMA_Z_LO);
        let span = F::from_f64(SIGMA_Z_HI - SIGMA_Z_LO);
        let sigma = crate::nn::tensor::sigmoid(&raw).map(|s| span * s + lo);
        (mu, sigma)
    }

    /// One encoder pass. Gaussian mode draws the reparameterized
    /// latent and needs a random stream; deterministic mode must not
    /// be given one.
    pub fn encode(&self, x0: &Tensor<F>, rng: Option<&mut Stream>) -> Result<Encoded<F>> {
        self.check_width(x0, self.cfg.x_dim, "encoder input")?;
        self.nfe.enc.fetch_add(1, Ordering::Relaxed);
        let out = self.encoder.forward(x0);
        match self.cfg.encoder_mode {
            EncoderMode::Deterministic => {
                if rng.is_some() {
                    return Err(Error::Contract(
                        "deterministic encoder takes no random stream".into(),
                    ));
                }
                Ok(Encoded {
                    z: out,
                    moments: None,
                })
            }
            EncoderMode::Gaussian => {
                let rng = rng.ok_or_else(|| {
                    Error::Contract("gaussian encoder needs a random stream".into())
                })?;
                let (mu, sigma) = self.gaussian_moments(&out);
                let eps = Tensor::randn(mu.rows, mu.cols, 1.0, rng);
                let noise = crate::nn::tensor::mul(&sigma, &eps);
                let z = crate::nn::tensor::add(&mu, &noise);
                Ok(Encoded {
                    z,
                    moments: Some((mu, sigma)),
                })
            }
        }
    }

    /// Posterior-mean latent: `mu` in Gaussian mode, the plain output
    /// in deterministic mode. Used wherever a noise-free latent is
    /// required (interpolation, latent statistics).
    pub fn encode_mean(&self, x0: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_width(x0, self.cfg.x_dim, "encoder input")?;
        self.nfe.enc.fetch_add(1, Ordering::Relaxed);
        let out = self.encoder.forward(x0);
        Ok(match self.cfg.encoder_mode {
            EncoderMode::Deterministic => out,
            EncoderMode::Gaussian => self.gaussian_moments(&out).0,
        })
    }

    /// One decoder pass: `xT = net(z)`. No other inputs exist, so the
    /// endpoint depends on the data only through the latent.
    pub fn decode(&self, z: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_width(z, self.cfg.z_dim, "decoder input")?;
        self.nfe.dec.fetch_add(1, Ordering::Relaxed);
        Ok(self.decoder.forward(z))
    }

    fn score_features(
        &self,
        x_t: &Tensor<F>,
        t: f64,
        x_end: &Tensor<F>,
        z: Option<&Tensor<F>>,
    ) -> Result<Tensor<F>> {
        self.check_width(x_t, self.cfg.x_dim, "state x_t")?;
        self.check_width(x_end, self.cfg.x_dim, "endpoint xT")?;
        if x_t.rows != x_end.rows {
            return Err(Error::Shape(format!(
                "x_t has {} rows, xT has {}",
                x_t.rows, x_end.rows
            )));
        }
        let te: Tensor<F> = time_embed(
            &vec![t; x_t.rows],
            self.bridge.schedule.t_end,
            self.cfg.time_embed_dim,
        );
        let mut feats = crate::nn::tensor::concat_cols(x_t, x_end);
        feats = crate::nn::tensor::concat_cols(&feats, &te);
        match (self.cfg.use_z_condition, z) {
            (true, Some(zt)) => {
                self.check_width(zt, self.cfg.z_dim, "latent z")?;
                if zt.rows != x_t.rows {
                    return Err(Error::Shape(format!(
                        "z has {} rows, x_t has {}",
                        zt.rows, x_t.rows
                    )));
                }
                feats = crate::nn::tensor::concat_cols(&feats, zt);
            }
            (true, None) => {
                return Err(Error::Contract(
                    "score network is configured to condition on z; none given".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Contract(
                    "score network does not condition on z; drop the argument".into(),
                ))
            }
            (false, None) => {}
        }
        Ok(feats)
    }

    /// Network `x0` prediction from `(x_t, xT, t [, z])`.
    pub fn predict_x0(
        &self,
        x_t: &Tensor<F>,
        t: f64,
        x_end: &Tensor<F>,
        z: Option<&Tensor<F>>,
    ) -> Result<Tensor<F>> {
        let feats = self.score_features(x_t, t, x_end, z)?;
        self.nfe.score.fetch_add(1, Ordering::Relaxed);
        Ok(self.score_net.forward(&feats))
    }

    /// Model score: the exact affine conversion of the `x0`
    /// prediction, `(mu(x0_hat, xT) - x_t) / sigma_hat^2`.
    pub fn score(
        &self,
        x_t: &Tensor<F>,
        t: f64,
        x_end: &Tensor<F>,
        z: Option<&Tensor<F>>,
    ) -> Result<Tensor<F>> {
        let x0_hat = self.predict_x0(x_t, t, x_end, z)?;
        let mut out = Tensor::zeros(x_t.rows, x_t.cols);
        for i in 0..x_t.rows {
            let xt_row: Vec<f64> = x_t.row(i).iter().map(|v| v.to_f64()).collect();
            let xe_row: Vec<f64> = x_end.row(i).iter().map(|v| v.to_f64()).collect();
            let x0_row: Vec<f64> = x0_hat.row(i).iter().map(|v| v.to_f64()).collect();
            let s = self.bridge.score_from_x0(&xt_row, t, &xe_row, &x0_row)?;
            for (j, v) in s.into_iter().enumerate() {
                out.set(i, j, F::from_f64(v));
            }
        }
        Ok(out)
    }

    /// Flat parameter names in checkpoint order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, net) in [
            ("enc", &self.encoder),
            ("dec", &self.decoder),
            ("score", &self.score_net),
        ] {
            for i in 0..net.weights.len() {
                names.push(format!("{prefix}.l{i}.w"));
                names.push(format!("{prefix}.l{i}.b"));
            }
        }
        names
    }

    /// Flat parameter view aligned with [`DbaeModel::param_names`].
    pub fn param_tensors(&self) -> Vec<&Tensor<F>> {
        let mut out = self.encoder.tensors();
        out.extend(self.decoder.tensors());
        out.extend(self.score_net.tensors());
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out.extend(self.score_net.tensors_mut());
        out
    }

    /// Overwrites all parameters from a flat list (e.g. an EMA
    /// shadow).
    pub fn set_params(&mut self, flat: &[Tensor<F>]) -> Result<()> {
        let mut own = self.param_tensors_mut();
        if own.len() != flat.len() {
            return Err(Error::Contract(format!(
                "parameter count {} does not match {}",
                flat.len(),
                own.len()
            )));
        }
        for (dst, src) in own.iter_mut().zip(flat) {
            if !dst.same_shape(src) {
                return Err(Error::Contract("parameter shape mismatch".into()));
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    /// Registers all three networks on a tape.
    pub fn vars(&self, tape: &mut Tape<F>, grad: bool) -> ModelVars {
        ModelVars {
            enc: self.encoder.vars(tape, grad),
            dec: self.decoder.vars(tape, grad),
            score: self.score_net.vars(tape, grad),
            z_dim: self.cfg.z_dim,
            encoder_mode: self.cfg.encoder_mode,
        }
    }
}

/// Taped encoder output.
pub struct EncodedVars {
    pub z: Var,
    pub moments: Option<(Var, Var)>,
}

/// Tape handles for the full bundle, with forward compositions that
/// mirror the inference paths operation for operation.
pub struct ModelVars {
    pub enc: MlpVars,
    pub dec: MlpVars,
    pub score: MlpVars,
    z_dim: usize,
    encoder_mode: EncoderMode,
}

impl ModelVars {
    /// Taped encoder pass; `eps` is the pre-drawn standard normal
    /// noise (a constant on the tape) for the Gaussian mode.
    pub fn encode<F: Real>(&self, tape: &mut Tape<F>, x0: Var, eps: Option<Var>) -> EncodedVars {
        let out = self.enc.apply(tape, x0);
        match self.encoder_mode {
            EncoderMode::Deterministic => EncodedVars {
                z: out,
                moments: None,
            },
            EncoderMode::Gaussian => {
                let l = self.z_dim;
                let mu = tape.slice_cols(out, 0, l);
                let raw = tape.slice_cols(out, l, 2 * l);
                let sg = tape.sigmoid(raw);
                let sigma = tape.affine(sg, SIGMA_Z_HI - SIGMA_Z_LO, SIGMA_Z_LO);
                let eps = eps.expect("gaussian encoder needs pre-drawn noise");
                let noise = tape.mul(sigma, eps);
                let z = tape.add(mu, noise);
                EncodedVars {
                    z,
                    moments: Some((mu, sigma)),
                }
            }
        }
    }

    pub fn decode<F: Real>(&self, tape: &mut Tape<F>, z: Var) -> Var {
        self.dec.apply(tape, z)
    }

    /// Taped `x0` prediction; `te` is the (constant) time-embedding
    /// block, one row per sample, so per-sample times are supported.
    pub fn predict_x0<F: Real>(
        &self,
        tape: &mut Tape<F>,
        x_t: Var,
        x_end: Var,
        te: Var,
        z: Option<Var>,
    ) -> Var {
        let mut feats = tape.concat_cols(x_t, x_end);
        feats = tape.concat_cols(feats, te);
        if let Some(zv) = z {
            feats = tape.concat_cols(feats, zv);
        }
        self.score.apply(tape, feats)
    }

    /// Gradient handles for all parameters, aligned with
    /// [`DbaeModel::param_names`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = self.enc.param_vars();
        out.extend(self.dec.param_vars());
        out.extend(self.score.param_vars());
        out
    }
}

/// Architecture of the latent prior network.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCfg {
    pub z_dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    /// Constant noise rate of the latent schedule.
    pub beta: f64,
    /// Horizon of the latent schedule.
    pub t_end: f64,
}

impl Default for PriorCfg {
    fn default() -> Self {
        PriorCfg {
            z_dim: 2,
            hidden: vec![64, 64],
            time_embed_dim: 16,
            beta: 0.008,
            t_end: 1000.0,
        }
    }
}

/// Noise-prediction network for the latent diffusion prior on the
/// constant-rate schedule.
#[derive(Debug, Clone)]
pub struct PriorModel<F> {
    pub cfg: PriorCfg,
    pub schedule: VpSchedule,
    pub net: Mlp<F>,
}

impl<F: Real> PriorModel<F> {
    pub fn new(cfg: PriorCfg, rng: &mut Stream) -> Result<Self> {
        if cfg.z_dim == 0 {
            return Err(Error::Config("latent dim must be positive".into()));
        }
        if cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0 {
            return Err(Error::Config(
                "time embedding dim must be even and >= 2".into(),
            ));
        }
        let schedule = VpSchedule::constant(cfg.beta, cfg.t_end)?;
        let mut sizes = vec![cfg.z_dim + cfg.time_embed_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(cfg.z_dim);
        let net = Mlp::new(&sizes, rng);
        Ok(PriorModel { cfg, schedule, net })
    }

    /// Predicted noise `eps_hat(z_t, t)`.
    pub fn eps_pred(&self, z_t: &Tensor<F>, t: f64) -> Result<Tensor<F>> {
        if z_t.cols != self.cfg.z_dim {
            return Err(Error::Shape(format!(
                "latent width {} does not match {}",
                z_t.cols, self.cfg.z_dim
            )));
        }
        let te: Tensor<F> = time_embed(
            &vec![t; z_t.rows],
            self.schedule.t_end,
            self.cfg.time_embed_dim,
        );
        let feats = crate::nn::tensor::concat_cols(z_t, &te);
        Ok(self.net.forward(&feats))
    }

    /// Taped version of [`PriorModel::eps_pred`] with per-sample
    /// times baked into the constant `te`.
    pub fn eps_pred_tape(
        &self,
        tape: &mut Tape<F>,
        vars: &MlpVars,
        z_t: Var,
        te: Var,
    ) -> Var {
        let feats = tape.concat_cols(z_t, te);
        vars.apply(tape, feats)
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.net.weights.len())
            .flat_map(|i| [format!("prior.l{i}.w"), format!("prior.l{i}.b")])
            .collect()
    }
}
