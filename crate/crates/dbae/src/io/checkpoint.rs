//! Training checkpoints.
//!
//! A checkpoint freezes everything a resumed run needs to reproduce
//! the exact step stream of an uninterrupted one: the run
//! configuration, the step counters, the exact generator states, the
//! latent normalization statistics, and every parameter block (live,
//! EMA shadow, and both Adam moments) in single precision.
//!
//! Layout: magic `DBCK` (4 bytes), header length (little-endian u32),
//! TOML header, then a packed little-endian f32 body. The header
//! carries a manifest naming each block with its shape and offset (in
//! element units) into the body, plus the configuration hash; loading
//! re-verifies the hash against the embedded configuration and the
//! manifest tiling against the body length, so silent truncation or
//! edits surface as errors instead of wrong numbers.

use super::config::RunConfig;
use crate::bridge::BridgeKernel;
use crate::model::{DbaeModel, PriorModel};
use crate::nn::optim::{Adam, AdamConfig, Ema};
use crate::nn::Tensor;
use crate::rng::{stream_from_seed, StreamState};
use crate::train::{PriorState, TrainState, ZNorm};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// File magic, first four bytes.
pub const CK_MAGIC: [u8; 4] = *b"DBCK";

const CK_VERSION: u32 = 1;

/// In-memory checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub rng: StreamState,
    pub prior_step: Option<u64>,
    pub prior_rng: Option<StreamState>,
    /// Latent normalization as `(mean, std)` when the run computed it.
    pub znorm: Option<(Vec<f64>, Vec<f64>)>,
    /// Named parameter blocks in body order.
    pub blocks: Vec<(String, Tensor<f32>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config_hash: String,
    step: u64,
    prior_step: Option<u64>,
    znorm_mean: Option<Vec<f64>>,
    znorm_std: Option<Vec<f64>>,
    rng: RngField,
    prior_rng: Option<RngField>,
    config: RunConfig,
    manifest: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngField {
    /// 32-byte generator key, hex encoded.
    seed: String,
    stream: u64,
    /// u128 word position, decimal string (TOML has no u128).
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    rows: u32,
    cols: u32,
    /// Offset into the body in f32 elements, not bytes.
    offset: u64,
}

fn rng_to_field(s: &StreamState) -> RngField {
    RngField {
        seed: hex_encode(&s.seed),
        stream: s.stream,
        word_pos: s.word_pos.to_string(),
    }
}

fn rng_from_field(f: &RngField) -> Result<StreamState> {
    let bytes = hex_decode(&f.seed)?;
    let seed: [u8; 32] = bytes
        .try_into()
        .map_err(|_| Error::Data("generator key must be 32 bytes of hex".into()))?;
    let word_pos = f
        .word_pos
        .parse::<u128>()
        .map_err(|e| Error::Data(format!("generator word position: {e}")))?;
    Ok(StreamState {
        seed,
        stream: f.stream,
        word_pos,
    })
}

impl Checkpoint {
    /// Serializes to the on-disk byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::with_capacity(self.blocks.len());
        let mut offset: u64 = 0;
        for (name, t) in &self.blocks {
            if t.rows > u32::MAX as usize || t.cols > u32::MAX as usize {
                return Err(Error::Contract(format!("block {name} is too large")));
            }
            manifest.push(ManifestEntry {
                name: name.clone(),
                rows: t.rows as u32,
                cols: t.cols as u32,
                offset,
            });
            offset += (t.rows as u64) * (t.cols as u64);
        }
        let header = Header {
            version: CK_VERSION,
            config_hash: format!("{:016x}", self.config.hash()?),
            step: self.step,
            prior_step: self.prior_step,
            znorm_mean: self.znorm.as_ref().map(|(m, _)| m.clone()),
            znorm_std: self.znorm.as_ref().map(|(_, s)| s.clone()),
            rng: rng_to_field(&self.rng),
            prior_rng: self.prior_rng.as_ref().map(rng_to_field),
            config: self.config.clone(),
            manifest,
        };
        let header_text =
            toml::to_string(&header).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
        let header_bytes = header_text.as_bytes();
        if header_bytes.len() > u32::MAX as usize {
            return Err(Error::Contract("checkpoint header is too large".into()));
        }
        let mut out = Vec::with_capacity(8 + header_bytes.len() + offset as usize * 4);
        out.extend_from_slice(&CK_MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(header_bytes);
        for (_, t) in &self.blocks {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses the on-disk layout, verifying magic, version, the
    /// configuration hash, and the manifest tiling.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 8 || bytes[0..4] != CK_MAGIC {
            return Err(Error::Data("not a checkpoint file".into()));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + header_len {
            return Err(Error::Data(format!(
                "checkpoint header claims {} bytes, file holds {}",
                header_len,
                bytes.len() - 8
            )));
        }
        let header_text = std::str::from_utf8(&bytes[8..8 + header_len])
            .map_err(|_| Error::Data("checkpoint header is not utf-8".into()))?;
        let header: Header = toml::from_str(header_text)
            .map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        if header.version != CK_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} is not supported (expected {CK_VERSION})",
                header.version
            )));
        }
        let expect = format!("{:016x}", header.config.hash()?);
        if header.config_hash != expect {
            return Err(Error::Data(
                "checkpoint configuration hash does not match its contents".into(),
            ));
        }
        let body = &bytes[8 + header_len..];
        let mut running: u64 = 0;
        for e in &header.manifest {
            if e.offset != running {
                return Err(Error::Data(format!(
                    "manifest block {} starts at {} but the running total is {}",
                    e.name, e.offset, running
                )));
            }
            running += (e.rows as u64) * (e.cols as u64);
        }
        if running * 4 != body.len() as u64 {
            return Err(Error::Data(format!(
                "manifest describes {} bytes, body holds {}",
                running * 4,
                body.len()
            )));
        }
        let mut blocks = Vec::with_capacity(header.manifest.len());
        for e in &header.manifest {
            let start = e.offset as usize * 4;
            let count = (e.rows as usize) * (e.cols as usize);
            let data: Vec<f32> = body[start..start + count * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push((
                e.name.clone(),
                Tensor::from_vec(e.rows as usize, e.cols as usize, data),
            ));
        }
        let znorm = match (header.znorm_mean, header.znorm_std) {
            (Some(m), Some(s)) if m.len() == s.len() => Some((m, s)),
            (None, None) => None,
            _ => {
                return Err(Error::Data(
                    "latent normalization mean and std must both be present and equal length"
                        .into(),
                ))
            }
        };
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            rng: rng_from_field(&header.rng)?,
            prior_step: header.prior_step,
            prior_rng: header.prior_rng.as_ref().map(rng_from_field).transpose()?,
            znorm,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn push_group(
    blocks: &mut Vec<(String, Tensor<f32>)>,
    prefix: &str,
    names: &[String],
    tensors: &[&Tensor<f32>],
) {
    assert_eq!(names.len(), tensors.len(), "name/tensor count mismatch");
    for (name, t) in names.iter().zip(tensors) {
        blocks.push((format!("{prefix}{name}"), (*t).clone()));
    }
}

/// Captures a full training snapshot.
pub fn pack(
    config: &RunConfig,
    ae: &TrainState<f32>,
    prior: Option<&PriorState<f32>>,
    znorm: Option<&ZNorm>,
) -> Checkpoint {
    let mut blocks = Vec::new();
    let names = ae.model.param_names();
    push_group(&mut blocks, "live.", &names, &ae.model.param_tensors());
    let shadow: Vec<&Tensor<f32>> = ae.ema.shadow.iter().collect();
    push_group(&mut blocks, "ema.", &names, &shadow);
    let m: Vec<&Tensor<f32>> = ae.adam.m.iter().collect();
    push_group(&mut blocks, "adam_m.", &names, &m);
    let v: Vec<&Tensor<f32>> = ae.adam.v.iter().collect();
    push_group(&mut blocks, "adam_v.", &names, &v);
    if let Some(p) = prior {
        let pnames = p.prior.param_names();
        push_group(&mut blocks, "live.", &pnames, &p.prior.net.tensors());
        let shadow: Vec<&Tensor<f32>> = p.ema.shadow.iter().collect();
        push_group(&mut blocks, "ema.", &pnames, &shadow);
        let m: Vec<&Tensor<f32>> = p.adam.m.iter().collect();
        push_group(&mut blocks, "adam_m.", &pnames, &m);
        let v: Vec<&Tensor<f32>> = p.adam.v.iter().collect();
        push_group(&mut blocks, "adam_v.", &pnames, &v);
    }
    Checkpoint {
        config: config.clone(),
        step: ae.step,
        rng: StreamState::capture(&ae.rng),
        prior_step: prior.map(|p| p.step),
        prior_rng: prior.map(|p| StreamState::capture(&p.rng)),
        znorm: znorm.map(|z| (z.mean.clone(), z.std.clone())),
        blocks,
    }
}

fn block_map(blocks: &[(String, Tensor<f32>)]) -> HashMap<&str, &Tensor<f32>> {
    blocks.iter().map(|(n, t)| (n.as_str(), t)).collect()
}

fn collect_group(
    map: &HashMap<&str, &Tensor<f32>>,
    prefix: &str,
    names: &[String],
) -> Result<Vec<Tensor<f32>>> {
    names
        .iter()
        .map(|n| {
            let key = format!("{prefix}{n}");
            map.get(key.as_str())
                .map(|t| (*t).clone())
                .ok_or_else(|| Error::Data(format!("checkpoint is missing block {key}")))
        })
        .collect()
}

fn check_shapes(got: &[Tensor<f32>], want: &[&Tensor<f32>], what: &str) -> Result<()> {
    for (g, w) in got.iter().zip(want) {
        if !g.same_shape(w) {
            return Err(Error::Data(format!(
                "checkpoint {what} block is {}x{}, model expects {}x{}",
                g.rows, g.cols, w.rows, w.cols
            )));
        }
    }
    Ok(())
}

/// Rebuilds the autoencoder training state. The optimizer step count
/// equals the training step count because the loop performs exactly
/// one optimizer update per step, so only one counter is stored.
pub fn unpack_ae(ck: &Checkpoint) -> Result<TrainState<f32>> {
    ck.config.validate()?;
    let schedule = ck.config.schedule.to_schedule()?;
    let mut init_rng = stream_from_seed(ck.config.seed);
    let mut model: DbaeModel<f32> = DbaeModel::new(
        ck.config.model.to_cfg(),
        BridgeKernel::new(schedule),
        &mut init_rng,
    )?;
    let names = model.param_names();
    let map = block_map(&ck.blocks);
    let live = collect_group(&map, "live.", &names)?;
    let shadow = collect_group(&map, "ema.", &names)?;
    let m = collect_group(&map, "adam_m.", &names)?;
    let v = collect_group(&map, "adam_v.", &names)?;
    {
        let params = model.param_tensors();
        check_shapes(&shadow, &params, "EMA")?;
        check_shapes(&m, &params, "Adam m")?;
        check_shapes(&v, &params, "Adam v")?;
    }
    model.set_params(&live)?;
    let adam = Adam {
        cfg: AdamConfig {
            lr: ck.config.train.lr,
            ..AdamConfig::default()
        },
        step: ck.step,
        m,
        v,
    };
    let ema = Ema {
        decay: ck.config.train.ema_rate,
        shadow,
    };
    Ok(TrainState {
        model,
        adam,
        ema,
        rng: ck.rng.restore(),
        step: ck.step,
    })
}

/// Rebuilds the prior training state when the checkpoint carries one.
pub fn unpack_prior(ck: &Checkpoint) -> Result<Option<PriorState<f32>>> {
    let (step, rng) = match (ck.prior_step, &ck.prior_rng) {
        (Some(s), Some(r)) => (s, r),
        (None, None) => return Ok(None),
        _ => {
            return Err(Error::Data(
                "checkpoint carries half of a prior state".into(),
            ))
        }
    };
    let mut init_rng = stream_from_seed(ck.config.seed);
    let mut prior: PriorModel<f32> = PriorModel::new(
        ck.config.prior.to_cfg(ck.config.model.z_dim),
        &mut init_rng,
    )?;
    let names = prior.param_names();
    let map = block_map(&ck.blocks);
    let live = collect_group(&map, "live.", &names)?;
    let shadow = collect_group(&map, "ema.", &names)?;
    let m = collect_group(&map, "adam_m.", &names)?;
    let v = collect_group(&map, "adam_v.", &names)?;
    {
        let params = prior.net.tensors();
        check_shapes(&live, &params, "prior live")?;
        check_shapes(&shadow, &params, "prior EMA")?;
        check_shapes(&m, &params, "prior Adam m")?;
        check_shapes(&v, &params, "prior Adam v")?;
    }
    for (dst, src) in prior.net.tensors_mut().into_iter().zip(&live) {
        *dst = src.clone();
    }
    let adam = Adam {
        cfg: AdamConfig {
            lr: ck.config.prior_train.lr,
            ..AdamConfig::default()
        },
        step,
        m,
        v,
    };
    let ema = Ema {
        decay: ck.config.prior_train.ema_rate,
        shadow,
    };
    Ok(Some(PriorState {
        prior,
        adam,
        ema,
        rng: rng.restore(),
        step,
    }))
}

/// Latent normalization, when stored.
pub fn unpack_znorm(ck: &Checkpoint) -> Option<ZNorm> {
    ck.znorm.as_ref().map(|(mean, std)| ZNorm {
        mean: mean.clone(),
        std: std.clone(),
    })
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Data("hex string has odd length".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|e| Error::Data(format!("hex string: {e}")))
        })
        .collect()
}
