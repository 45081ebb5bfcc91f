//! Run configuration.
//!
//! A `RunConfig` is the single TOML document that describes a whole
//! run: schedule, model architecture, training settings for both
//! stages, sampler settings, dataset path, and the top-level seed.
//! The schema is strict: unknown keys and unknown enum values are
//! rejected, every section is optional and defaults to the library
//! defaults, and dotted-path overrides (`a.b.c=value`) can be layered
//! on top of a parsed document. A 64-bit FNV-1a hash of the canonical
//! serialization identifies a configuration in checkpoints and
//! evaluation reports.

use crate::model::{EncoderMode, ModelCfg, PriorCfg};
use crate::sample::{GridKind, SamplerCfg, SamplerKind};
use crate::schedule::VpSchedule;
use crate::train::{LossForm, PriorLoss, PriorTrainCfg, TrainCfg};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Schedule family name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindCfg {
    Linear,
    Constant,
}

/// `[schedule]` section. `beta_min`/`beta_max` drive the linear kind,
/// `beta` the constant kind; the unused fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleCfg {
    pub kind: ScheduleKindCfg,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta: f64,
    pub t_end: f64,
}

impl Default for ScheduleCfg {
    fn default() -> Self {
        ScheduleCfg {
            kind: ScheduleKindCfg::Linear,
            beta_min: 0.1,
            beta_max: 20.0,
            beta: 0.008,
            t_end: 1.0,
        }
    }
}

impl ScheduleCfg {
    pub fn to_schedule(&self) -> Result<VpSchedule> {
        match self.kind {
            ScheduleKindCfg::Linear => VpSchedule::linear(self.beta_min, self.beta_max, self.t_end),
            ScheduleKindCfg::Constant => VpSchedule::constant(self.beta, self.t_end),
        }
    }
}

/// Encoder flavor name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderModeCfg {
    Deterministic,
    Gaussian,
}

impl From<EncoderModeCfg> for EncoderMode {
    fn from(m: EncoderModeCfg) -> Self {
        match m {
            EncoderModeCfg::Deterministic => EncoderMode::Deterministic,
            EncoderModeCfg::Gaussian => EncoderMode::Gaussian,
        }
    }
}

impl From<EncoderMode> for EncoderModeCfg {
    fn from(m: EncoderMode) -> Self {
        match m {
            EncoderMode::Deterministic => EncoderModeCfg::Deterministic,
            EncoderMode::Gaussian => EncoderModeCfg::Gaussian,
        }
    }
}

/// `[model]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub x_dim: usize,
    pub z_dim: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub score_hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub encoder_mode: EncoderModeCfg,
    pub use_z_condition: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from(&ModelCfg::default())
    }
}

impl From<&ModelCfg> for ModelSection {
    fn from(c: &ModelCfg) -> Self {
        ModelSection {
            x_dim: c.x_dim,
            z_dim: c.z_dim,
            enc_hidden: c.enc_hidden.clone(),
            dec_hidden: c.dec_hidden.clone(),
            score_hidden: c.score_hidden.clone(),
            time_embed_dim: c.time_embed_dim,
            encoder_mode: c.encoder_mode.into(),
            use_z_condition: c.use_z_condition,
        }
    }
}

impl ModelSection {
    pub fn to_cfg(&self) -> ModelCfg {
        ModelCfg {
            x_dim: self.x_dim,
            z_dim: self.z_dim,
            enc_hidden: self.enc_hidden.clone(),
            dec_hidden: self.dec_hidden.clone(),
            score_hidden: self.score_hidden.clone(),
            time_embed_dim: self.time_embed_dim,
            encoder_mode: self.encoder_mode.into(),
            use_z_condition: self.use_z_condition,
        }
    }
}

/// Loss form name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFormCfg {
    ScoreMatching,
    X0Weighted,
    X0Simple,
}

impl From<LossFormCfg> for LossForm {
    fn from(f: LossFormCfg) -> Self {
        match f {
            LossFormCfg::ScoreMatching => LossForm::ScoreMatching,
            LossFormCfg::X0Weighted => LossForm::X0Weighted,
            LossFormCfg::X0Simple => LossForm::X0Simple,
        }
    }
}

impl From<LossForm> for LossFormCfg {
    fn from(f: LossForm) -> Self {
        match f {
            LossForm::ScoreMatching => LossFormCfg::ScoreMatching,
            LossForm::X0Weighted => LossFormCfg::X0Weighted,
            LossForm::X0Simple => LossFormCfg::X0Simple,
        }
    }
}

/// `[train]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub ema_rate: f64,
    pub total_steps: u64,
    pub loss_form: LossFormCfg,
    pub tc_weight: f64,
    pub seed: u64,
    pub metrics_every: u64,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection::from(&TrainCfg::default())
    }
}

impl From<&TrainCfg> for TrainSection {
    fn from(c: &TrainCfg) -> Self {
        TrainSection {
            batch_size: c.batch_size,
            lr: c.lr,
            ema_rate: c.ema_rate,
            total_steps: c.total_steps,
            loss_form: c.loss_form.into(),
            tc_weight: c.tc_weight,
            seed: c.seed,
            metrics_every: c.metrics_every,
            max_grad_norm: c.max_grad_norm,
        }
    }
}

impl TrainSection {
    pub fn to_cfg(&self) -> TrainCfg {
        TrainCfg {
            batch_size: self.batch_size,
            lr: self.lr,
            ema_rate: self.ema_rate,
            total_steps: self.total_steps,
            loss_form: self.loss_form.into(),
            tc_weight: self.tc_weight,
            seed: self.seed,
            metrics_every: self.metrics_every,
            max_grad_norm: self.max_grad_norm,
        }
    }
}

/// `[prior]` section (architecture and latent schedule; the latent
/// width always follows `model.z_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub beta: f64,
    pub t_end: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        let c = PriorCfg::default();
        PriorSection {
            hidden: c.hidden,
            time_embed_dim: c.time_embed_dim,
            beta: c.beta,
            t_end: c.t_end,
        }
    }
}

impl PriorSection {
    pub fn to_cfg(&self, z_dim: usize) -> PriorCfg {
        PriorCfg {
            z_dim,
            hidden: self.hidden.clone(),
            time_embed_dim: self.time_embed_dim,
            beta: self.beta,
            t_end: self.t_end,
        }
    }
}

/// Prior residual penalty name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorLossCfg {
    L1,
    L2,
}

impl From<PriorLossCfg> for PriorLoss {
    fn from(l: PriorLossCfg) -> Self {
        match l {
            PriorLossCfg::L1 => PriorLoss::L1,
            PriorLossCfg::L2 => PriorLoss::L2,
        }
    }
}

impl From<PriorLoss> for PriorLossCfg {
    fn from(l: PriorLoss) -> Self {
        match l {
            PriorLoss::L1 => PriorLossCfg::L1,
            PriorLoss::L2 => PriorLossCfg::L2,
        }
    }
}

/// `[prior_train]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorTrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub ema_rate: f64,
    pub total_steps: u64,
    pub loss: PriorLossCfg,
    pub seed: u64,
    pub metrics_every: u64,
    pub t_lo_frac: f64,
}

impl Default for PriorTrainSection {
    fn default() -> Self {
        PriorTrainSection::from(&PriorTrainCfg::default())
    }
}

impl From<&PriorTrainCfg> for PriorTrainSection {
    fn from(c: &PriorTrainCfg) -> Self {
        PriorTrainSection {
            batch_size: c.batch_size,
            lr: c.lr,
            ema_rate: c.ema_rate,
            total_steps: c.total_steps,
            loss: c.loss.into(),
            seed: c.seed,
            metrics_every: c.metrics_every,
            t_lo_frac: c.t_lo_frac,
        }
    }
}

impl PriorTrainSection {
    pub fn to_cfg(&self) -> PriorTrainCfg {
        PriorTrainCfg {
            batch_size: self.batch_size,
            lr: self.lr,
            ema_rate: self.ema_rate,
            total_steps: self.total_steps,
            loss: self.loss.into(),
            seed: self.seed,
            metrics_every: self.metrics_every,
            t_lo_frac: self.t_lo_frac,
        }
    }
}

/// Integrator name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKindCfg {
    HeunOde,
    EulerOde,
    EulerMaruyamaSde,
}

impl From<SamplerKindCfg> for SamplerKind {
    fn from(k: SamplerKindCfg) -> Self {
        match k {
            SamplerKindCfg::HeunOde => SamplerKind::HeunOde,
            SamplerKindCfg::EulerOde => SamplerKind::EulerOde,
            SamplerKindCfg::EulerMaruyamaSde => SamplerKind::EulerMaruyamaSde,
        }
    }
}

impl From<SamplerKind> for SamplerKindCfg {
    fn from(k: SamplerKind) -> Self {
        match k {
            SamplerKind::HeunOde => SamplerKindCfg::HeunOde,
            SamplerKind::EulerOde => SamplerKindCfg::EulerOde,
            SamplerKind::EulerMaruyamaSde => SamplerKindCfg::EulerMaruyamaSde,
        }
    }
}

/// Time grid name (`quadratic` concentrates nodes toward time zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKindCfg {
    Uniform,
    Quadratic,
}

impl From<GridKindCfg> for GridKind {
    fn from(g: GridKindCfg) -> Self {
        match g {
            GridKindCfg::Uniform => GridKind::Uniform,
            GridKindCfg::Quadratic => GridKind::QuadraticToward0,
        }
    }
}

impl From<GridKind> for GridKindCfg {
    fn from(g: GridKind) -> Self {
        match g {
            GridKind::Uniform => GridKindCfg::Uniform,
            GridKind::QuadraticToward0 => GridKindCfg::Quadratic,
        }
    }
}

/// `[sampler]` section. `latent_steps` sets the latent-prior reverse
/// pass length; the other fields configure the data-space integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub kind: SamplerKindCfg,
    pub steps: usize,
    pub grid: GridKindCfg,
    pub seed: u64,
    pub latent_steps: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let c = SamplerCfg::default();
        SamplerSection {
            kind: c.kind.into(),
            steps: c.steps,
            grid: c.grid.into(),
            seed: c.seed,
            latent_steps: 100,
        }
    }
}

impl SamplerSection {
    pub fn to_cfg(&self) -> SamplerCfg {
        SamplerCfg {
            kind: self.kind.into(),
            steps: self.steps,
            grid: self.grid.into(),
            seed: self.seed,
        }
    }
}

/// Whole-run configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Top-level seed for model initialization.
    pub seed: u64,
    /// Dataset path (tensor file or CSV); subcommands that need data
    /// fail with a config error when it is absent.
    pub dataset: Option<String>,
    pub schedule: ScheduleCfg,
    pub model: ModelSection,
    pub train: TrainSection,
    pub prior: PriorSection,
    pub prior_train: PriorTrainSection,
    pub sampler: SamplerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: None,
            schedule: ScheduleCfg::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            prior: PriorSection::default(),
            prior_train: PriorTrainSection::default(),
            sampler: SamplerSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML document; unknown keys are an error.
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))
    }

    /// Reads and parses a TOML file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Canonical serialization; equal configs serialize identically.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    /// Applies dotted-path overrides (`section.key=value`). Values are
    /// parsed as TOML (numbers, booleans, arrays); anything that does
    /// not parse is taken as a bare string. The result is re-validated
    /// against the schema, so a typo in a key is still rejected.
    pub fn apply_sets(&self, sets: &[(String, String)]) -> Result<RunConfig> {
        let text = self.to_toml_string()?;
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config reparse: {e}")))?;
        for (key, value) in sets {
            let parts: Vec<&str> = key.split('.').collect();
            if parts.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(format!("malformed override key '{key}'")));
            }
            let parsed = parse_toml_value(value);
            let mut node = &mut doc;
            for part in &parts[..parts.len() - 1] {
                node = node
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| {
                        Error::Config(format!("override '{key}' descends into a non-table"))
                    })?;
            }
            node.insert(parts[parts.len() - 1].to_string(), parsed);
        }
        doc.try_into()
            .map_err(|e| Error::Config(format!("config override: {e}")))
    }

    /// FNV-1a (64-bit) hash of the canonical serialization.
    pub fn hash(&self) -> Result<u64> {
        Ok(fnv1a64(self.to_toml_string()?.as_bytes()))
    }

    /// Builds and validates every library config this document
    /// describes.
    pub fn validate(&self) -> Result<()> {
        self.schedule.to_schedule()?;
        self.model.to_cfg().validate()?;
        self.train.to_cfg().validate()?;
        self.prior_train.to_cfg().validate()?;
        self.sampler.to_cfg().validate()?;
        if self.sampler.latent_steps == 0 {
            return Err(Error::Config("latent_steps must be positive".into()));
        }
        // prior architecture checks run at construction; replicate the
        // cheap ones here so `validate` catches them without an rng
        if self.prior.time_embed_dim < 2 || self.prior.time_embed_dim % 2 != 0 {
            return Err(Error::Config(
                "prior time embedding dim must be even and >= 2".into(),
            ));
        }
        VpSchedule::constant(self.prior.beta, self.prior.t_end)?;
        Ok(())
    }
}

/// Splits one `key=value` override argument.
pub fn split_set(arg: &str) -> Result<(String, String)> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Config(format!(
            "override '{arg}' is not of the form key=value"
        ))),
    }
}

fn parse_toml_value(s: &str) -> toml::Value {
    // a bare scalar is not a TOML document, so wrap it as one
    let wrapped = format!("v = {s}");
    if let Ok(table) = wrapped.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(s.to_string())
}

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
