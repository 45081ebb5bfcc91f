//! Command-line front end.
//!
//! Every subcommand is a thin orchestration layer over the library:
//! parse a configuration, load data, drive the training or sampling
//! call, and write machine-readable outputs (CSV metrics, binary
//! tensors, PGM grids). Training runs in single precision. Exit codes
//! distinguish configuration mistakes (2), data and file problems (3),
//! and numeric failures (4); anything else that errors exits 1 with a
//! one-line diagnostic on stderr.

use clap::{Parser, Subcommand};
use dbae::bridge::BridgeKernel;
use dbae::eval::{self, ProbeTask, ReconMetric};
use dbae::io::checkpoint::{self, Checkpoint};
use dbae::io::config::{split_set, RunConfig};
use dbae::io::{csvio, dataset, pgm, tensor_file, toy};
use dbae::model::DbaeModel;
use dbae::nn::Tensor;
use dbae::rng::stream_from_seed;
use dbae::sample::{self, Bundle};
use dbae::train::{encode_dataset_means, fit_z_stats, PriorState, StepMetrics, TrainState};
use dbae::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "dbae", version, about = "Bridge-diffusion autoencoder toolkit")]
struct Cli {
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dotted-path configuration override, repeatable (a.b.c=value).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory for checkpoints, metrics, and samples.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out: PathBuf,
    /// Overrides the top-level (initialization) seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trains the autoencoder and writes metrics.csv plus a checkpoint.
    Train {
        /// Resume from this checkpoint instead of initializing fresh.
        /// The embedded configuration is authoritative on resume.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Step budget for this invocation; training stops and
        /// checkpoints after this many steps even when total_steps
        /// lie further out.
        #[arg(long, value_name = "N")]
        steps: Option<u64>,
    },
    /// Trains the latent prior on top of a finished autoencoder
    /// checkpoint and folds it into the checkpoint file.
    TrainPrior {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Step budget for this invocation, as for train.
        #[arg(long, value_name = "N")]
        steps: Option<u64>,
    },
    /// Reconstructs dataset rows through encode, decode, and the
    /// reverse pass; writes inputs and reconstructions.
    Reconstruct {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Number of leading dataset rows to reconstruct.
        #[arg(long, default_value_t = 8)]
        n: usize,
    },
    /// Draws fresh samples through the latent prior and the reverse
    /// pass; requires a checkpoint that includes a trained prior.
    Generate {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        n: usize,
    },
    /// Mixes the latents of two dataset rows over a weight grid and
    /// decodes every mix.
    Interpolate {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Dataset row index of the first endpoint.
        #[arg(long, default_value_t = 0)]
        a: usize,
        /// Dataset row index of the second endpoint.
        #[arg(long, default_value_t = 1)]
        b: usize,
        /// Number of mixing weights, spaced uniformly over [0, 1].
        #[arg(long, default_value_t = 9)]
        grid: usize,
    },
    /// Shifts one row's latent along a direction and decodes the
    /// result next to the plain reconstruction.
    Manipulate {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Dataset row index to edit.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Explicit latent direction as comma-separated numbers.
        #[arg(long, value_name = "V1,V2,...")]
        direction: Option<String>,
        /// Derive the direction from this label column instead: unit
        /// vector from the class-0 latent mean to the class-1 mean.
        #[arg(long, value_name = "COL")]
        attr: Option<usize>,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        strength: f64,
    },
    /// Computes evaluation metrics and writes eval.csv.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Row budget for reconstruction and distribution metrics.
        #[arg(long, default_value_t = 512)]
        n: usize,
    },
    /// Writes a synthetic dataset (with labels) to a tensor file.
    MakeToyData {
        /// One of: two_moons, circles, eight_gaussians, checkerboard,
        /// shapes8.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        /// Output path; defaults to <out>/<kind>.dbt.
        #[arg(long, value_name = "FILE")]
        path: Option<PathBuf>,
    },
    /// Runs quick closed-form identity checks and exits nonzero on
    /// any failure.
    Selftest,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        });
    }
}

fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    match &cli.cmd {
        Cmd::Train { resume, steps } => cmd_train(cli, resume.as_deref(), *steps),
        Cmd::TrainPrior { checkpoint, steps } => {
            cmd_train_prior(cli, checkpoint.as_deref(), *steps)
        }
        Cmd::Reconstruct { checkpoint, n } => cmd_reconstruct(cli, checkpoint.as_deref(), *n),
        Cmd::Generate { checkpoint, n } => cmd_generate(cli, checkpoint.as_deref(), *n),
        Cmd::Interpolate {
            checkpoint,
            a,
            b,
            grid,
        } => cmd_interpolate(cli, checkpoint.as_deref(), *a, *b, *grid),
        Cmd::Manipulate {
            checkpoint,
            index,
            direction,
            attr,
            strength,
        } => cmd_manipulate(
            cli,
            checkpoint.as_deref(),
            *index,
            direction.as_deref(),
            *attr,
            *strength,
        ),
        Cmd::Eval { checkpoint, n } => cmd_eval(cli, checkpoint.as_deref(), *n),
        Cmd::MakeToyData { kind, n, path } => cmd_make_toy(cli, kind, *n, path.as_deref()),
        Cmd::Selftest => cmd_selftest(),
    }
}

/// Assembles the effective configuration from file, overrides, and
/// the seed flag.
fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let sets: Vec<(String, String)> = cli
        .sets
        .iter()
        .map(|s| split_set(s))
        .collect::<Result<_>>()?;
    if !sets.is_empty() {
        cfg = cfg.apply_sets(&sets)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Resumed and checkpoint-driven subcommands must not silently mix a
/// second configuration source with the embedded one.
fn reject_config_flags(cli: &Cli, context: &str) -> Result<()> {
    if cli.config.is_some() || !cli.sets.is_empty() || cli.seed.is_some() {
        return Err(Error::Config(format!(
            "{context} uses the configuration embedded in the checkpoint; \
             drop --config, --set, and --seed"
        )));
    }
    Ok(())
}

fn checkpoint_path(cli: &Cli, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out.join("checkpoint.dbck"))
}

fn load_dataset_of(cfg: &RunConfig) -> Result<(Tensor<f64>, Option<Tensor<f64>>)> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset configured (set dataset = \"...\")".into()))?;
    dataset::load_dataset(Path::new(path))
}

fn fresh_ae_state(cfg: &RunConfig) -> Result<TrainState<f32>> {
    let schedule = cfg.schedule.to_schedule()?;
    let mut rng = stream_from_seed(cfg.seed);
    let model: DbaeModel<f32> =
        DbaeModel::new(cfg.model.to_cfg(), BridgeKernel::new(schedule), &mut rng)?;
    TrainState::new(model, &cfg.train.to_cfg())
}

fn take_rows(t: &Tensor<f64>, n: usize) -> Tensor<f64> {
    let n = n.min(t.rows);
    let mut out = Tensor::zeros(n, t.cols);
    out.data.copy_from_slice(&t.data[..n * t.cols]);
    out
}

fn one_row(t: &Tensor<f64>, i: usize, what: &str) -> Result<Tensor<f64>> {
    if i >= t.rows {
        return Err(Error::Config(format!(
            "{what} row {i} is out of range (dataset has {} rows)",
            t.rows
        )));
    }
    Ok(Tensor::from_vec(1, t.cols, t.row(i).to_vec()))
}

/// Writes a PGM montage next to a tensor output when the rows are
/// square images.
fn maybe_montage(path: &Path, batch: &Tensor<f64>) -> Result<()> {
    let side = (batch.cols as f64).sqrt().round() as usize;
    if side >= 2 && side * side == batch.cols {
        let per_row = (batch.rows as f64).sqrt().ceil() as usize;
        pgm::write_pgm_montage(path, batch, per_row.max(1))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn last_loss(metrics: &[StepMetrics]) -> f64 {
    metrics.last().map(|m| m.loss_ae).unwrap_or(f64::NAN)
}

/// Checkpoint cadence during long runs, so a killed process loses at
/// most this many steps.
const SAVE_EVERY: u64 = 1000;

/// Clamps the invocation budget against the steps left before
/// total_steps.
fn run_budget(done: u64, total: u64, budget: Option<u64>, what: &str) -> Result<u64> {
    if done >= total {
        return Err(Error::Config(format!(
            "checkpoint is already at step {done} of {total}; raise {what} to continue"
        )));
    }
    let remaining = total - done;
    match budget {
        Some(0) => Err(Error::Config("need a step budget of at least 1".into())),
        Some(n) => Ok(n.min(remaining)),
        None => Ok(remaining),
    }
}

fn cmd_train(cli: &Cli, resume: Option<&Path>, steps: Option<u64>) -> Result<()> {
    let (cfg, mut state) = match resume {
        Some(p) => {
            reject_config_flags(cli, "train --resume")?;
            let ck = Checkpoint::load(p)?;
            let state = checkpoint::unpack_ae(&ck)?;
            (ck.config, state)
        }
        None => {
            let cfg = load_config(cli)?;
            let state = fresh_ae_state(&cfg)?;
            (cfg, state)
        }
    };
    let (data64, _) = load_dataset_of(&cfg)?;
    let data: Tensor<f32> = data64.cast();
    let total = cfg.train.total_steps;
    let this_run = run_budget(state.step, total, steps, "train.total_steps")?;

    let ck_path = cli.out.join("checkpoint.dbck");
    let mut metrics = Vec::new();
    let mut done = 0;
    while done < this_run {
        let chunk = SAVE_EVERY.min(this_run - done);
        state.train_steps(&data, &cfg.train.to_cfg(), chunk, &mut metrics)?;
        done += chunk;
        checkpoint::pack(&cfg, &state, None, None).save(&ck_path)?;
    }

    let metrics_path = cli.out.join("metrics.csv");
    csvio::write_metrics_csv(&metrics_path, &metrics)?;
    println!(
        "trained {} steps (now at {}/{}), loss {:.6}",
        this_run,
        state.step,
        total,
        last_loss(&metrics)
    );
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", ck_path.display());
    Ok(())
}

fn cmd_train_prior(cli: &Cli, flag: Option<&Path>, steps: Option<u64>) -> Result<()> {
    reject_config_flags(cli, "train-prior")?;
    let ck_path = checkpoint_path(cli, flag);
    let ck = Checkpoint::load(&ck_path)?;
    let ae = checkpoint::unpack_ae(&ck)?;
    let (data64, _) = load_dataset_of(&ck.config)?;
    let data: Tensor<f32> = data64.cast();

    // the EMA weights encode the bank; they are what sampling uses
    let ema_model = ae.ema_model();
    let znorm = fit_z_stats(&ema_model, &data)?;
    let bank = znorm.normalize(&encode_dataset_means(&ema_model, &data)?)?;

    let mut pstate = match checkpoint::unpack_prior(&ck)? {
        Some(p) => p,
        None => {
            let mut rng = stream_from_seed(ck.config.seed);
            let prior = dbae::model::PriorModel::new(
                ck.config.prior.to_cfg(ck.config.model.z_dim),
                &mut rng,
            )?;
            PriorState::new(prior, &ck.config.prior_train.to_cfg())?
        }
    };
    let total = ck.config.prior_train.total_steps;
    let this_run = run_budget(pstate.step, total, steps, "prior_train.total_steps")?;

    let mut metrics = Vec::new();
    let mut warned = false;
    let mut done = 0;
    while done < this_run {
        let chunk = SAVE_EVERY.min(this_run - done);
        warned |= pstate.train_steps(&bank, &ck.config.prior_train.to_cfg(), chunk, &mut metrics)?;
        done += chunk;
        checkpoint::pack(&ck.config, &ae, Some(&pstate), Some(&znorm)).save(&ck_path)?;
    }
    if warned {
        eprintln!("warning: latent bank batches looked unnormalized");
    }

    let metrics_path = cli.out.join("prior_metrics.csv");
    csvio::write_metrics_csv(&metrics_path, &metrics)?;
    println!(
        "trained prior {} steps (now at {}/{}), loss {:.6}",
        this_run,
        pstate.step,
        total,
        last_loss(&metrics)
    );
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", ck_path.display());
    Ok(())
}

/// Loads a checkpoint and builds the sampling bundle around the EMA
/// weights.
fn load_bundle(cli: &Cli, flag: Option<&Path>) -> Result<(Checkpoint, Bundle<f32>)> {
    reject_config_flags(cli, "this subcommand")?;
    let ck_path = checkpoint_path(cli, flag);
    let ck = Checkpoint::load(&ck_path)?;
    let ae = checkpoint::unpack_ae(&ck)?;
    let mut bundle = Bundle::new(ae.ema_model());
    if let Some(p) = checkpoint::unpack_prior(&ck)? {
        bundle.prior = Some(p.ema_prior());
    }
    bundle.z_norm = checkpoint::unpack_znorm(&ck);
    Ok((ck, bundle))
}

fn cmd_reconstruct(cli: &Cli, flag: Option<&Path>, n: usize) -> Result<()> {
    let (ck, bundle) = load_bundle(cli, flag)?;
    let (data64, _) = load_dataset_of(&ck.config)?;
    let x64 = take_rows(&data64, n);
    let x: Tensor<f32> = x64.cast();
    let xh = sample::reconstruct(&x, &bundle, &ck.config.sampler.to_cfg())?;
    let xh64: Tensor<f64> = xh.cast();

    let in_path = cli.out.join("recon_inputs.dbt");
    let out_path = cli.out.join("recon.dbt");
    tensor_file::save_matrix_f64(&in_path, &x64)?;
    tensor_file::save_matrix_f32(&out_path, &xh)?;
    let mse = eval::recon_error(&x64, &xh64, ReconMetric::Mse)?;
    println!("reconstructed {} rows, mse {:.6}", x.rows, mse);
    println!("wrote {}", in_path.display());
    println!("wrote {}", out_path.display());
    maybe_montage(&cli.out.join("recon.pgm"), &xh64)?;
    Ok(())
}

fn cmd_generate(cli: &Cli, flag: Option<&Path>, n: usize) -> Result<()> {
    let (ck, bundle) = load_bundle(cli, flag)?;
    if bundle.prior.is_none() {
        return Err(Error::Config(
            "checkpoint has no latent prior; run train-prior first".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Config("need n >= 1 samples".into()));
    }
    let scfg = ck.config.sampler.to_cfg();
    let mut rng = stream_from_seed(scfg.seed);
    let out = sample::generate(&bundle, n, ck.config.sampler.latent_steps, &scfg, &mut rng)?;
    let x64: Tensor<f64> = out.x0.cast();

    let path = cli.out.join("samples.dbt");
    tensor_file::save_matrix_f32(&path, &out.x0)?;
    println!(
        "generated {} samples; network passes: encoder {}, decoder {}, score {}, prior {}",
        n, out.nfe.enc, out.nfe.dec, out.nfe.score, out.latent_nfe
    );
    println!("wrote {}", path.display());
    maybe_montage(&cli.out.join("samples.pgm"), &x64)?;
    Ok(())
}

fn cmd_interpolate(cli: &Cli, flag: Option<&Path>, a: usize, b: usize, grid: usize) -> Result<()> {
    let (ck, bundle) = load_bundle(cli, flag)?;
    if grid < 2 {
        return Err(Error::Config("need a grid of at least 2 weights".into()));
    }
    let (data64, _) = load_dataset_of(&ck.config)?;
    let xa: Tensor<f32> = one_row(&data64, a, "interpolation endpoint")?.cast();
    let xb: Tensor<f32> = one_row(&data64, b, "interpolation endpoint")?.cast();
    let lambdas: Vec<f64> = (0..grid)
        .map(|k| k as f64 / (grid - 1) as f64)
        .collect();
    let mixed = sample::interpolate(&xb, &xa, &lambdas, &bundle, &ck.config.sampler.to_cfg())?;

    let mut stacked = Tensor::<f32>::zeros(grid, data64.cols);
    for (k, row) in mixed.outputs.iter().enumerate() {
        stacked.data[k * data64.cols..(k + 1) * data64.cols].copy_from_slice(&row.data);
    }
    let path = cli.out.join("interp.dbt");
    tensor_file::save_matrix_f32(&path, &stacked)?;
    println!(
        "interpolated rows {a} -> {b} over {grid} weights (0 reproduces row {a}, 1 row {b})"
    );
    println!("wrote {}", path.display());
    maybe_montage(&cli.out.join("interp.pgm"), &stacked.cast())?;
    Ok(())
}

fn parse_direction(s: &str, z_dim: usize) -> Result<Tensor<f32>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("direction component '{p}': {e}")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != z_dim {
        return Err(Error::Config(format!(
            "direction has {} components, latent dim is {z_dim}",
            vals.len()
        )));
    }
    Ok(Tensor::from_vec(1, z_dim, vals).cast())
}

/// Unit vector from the class-0 latent mean to the class-1 mean of
/// one binary label column.
fn attr_direction(
    bundle: &Bundle<f32>,
    data: &Tensor<f32>,
    labels: &Tensor<f64>,
    col: usize,
) -> Result<Tensor<f32>> {
    if col >= labels.cols {
        return Err(Error::Config(format!(
            "label column {col} is out of range (labels have {} columns)",
            labels.cols
        )));
    }
    let z: Tensor<f64> = bundle.model.encode_mean(data)?.cast();
    let mut sums = [vec![0.0f64; z.cols], vec![0.0f64; z.cols]];
    let mut counts = [0usize; 2];
    for i in 0..z.rows {
        let y = labels.get(i, col);
        let class = if y == 0.0 {
            0
        } else if y == 1.0 {
            1
        } else {
            return Err(Error::Data(format!(
                "label column {col} is not binary (row {i} holds {y})"
            )));
        };
        counts[class] += 1;
        for j in 0..z.cols {
            sums[class][j] += z.get(i, j);
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Data(format!(
            "label column {col} needs both classes present"
        )));
    }
    let mut dir = vec![0.0f64; z.cols];
    for j in 0..z.cols {
        dir[j] = sums[1][j] / counts[1] as f64 - sums[0][j] / counts[0] as f64;
    }
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::Data(format!(
            "label column {col} separates no latent direction"
        )));
    }
    for v in dir.iter_mut() {
        *v /= norm;
    }
    Ok(Tensor::from_vec(1, z.cols, dir).cast())
}

fn cmd_manipulate(
    cli: &Cli,
    flag: Option<&Path>,
    index: usize,
    direction: Option<&str>,
    attr: Option<usize>,
    strength: f64,
) -> Result<()> {
    let (ck, bundle) = load_bundle(cli, flag)?;
    let (data64, labels) = load_dataset_of(&ck.config)?;
    let x: Tensor<f32> = one_row(&data64, index, "manipulation")?.cast();
    let z_dim = bundle.model.cfg.z_dim;
    let dir = match (direction, attr) {
        (Some(s), None) => parse_direction(s, z_dim)?,
        (None, Some(col)) => {
            let labels = labels.ok_or_else(|| {
                Error::Data("dataset has no label file to derive a direction from".into())
            })?;
            attr_direction(&bundle, &data64.cast(), &labels, col)?
        }
        _ => {
            return Err(Error::Config(
                "pass exactly one of --direction or --attr".into(),
            ))
        }
    };
    let scfg = ck.config.sampler.to_cfg();
    let base = sample::manipulate(&x, &dir, 0.0, &bundle, &scfg)?;
    let moved = sample::manipulate(&x, &dir, strength, &bundle, &scfg)?;

    let mut stacked = Tensor::<f32>::zeros(2, data64.cols);
    stacked.data[..data64.cols].copy_from_slice(&base.data);
    stacked.data[data64.cols..].copy_from_slice(&moved.data);
    let path = cli.out.join("manip.dbt");
    tensor_file::save_matrix_f32(&path, &stacked)?;
    println!(
        "manipulated row {index} with strength {strength} (row 0: reconstruction, row 1: edited)"
    );
    println!("wrote {}", path.display());
    maybe_montage(&cli.out.join("manip.pgm"), &stacked.cast())?;
    Ok(())
}

fn cmd_eval(cli: &Cli, flag: Option<&Path>, n: usize) -> Result<()> {
    let (ck, bundle) = load_bundle(cli, flag)?;
    let (data64, labels) = load_dataset_of(&ck.config)?;
    let x64 = take_rows(&data64, n);
    let x: Tensor<f32> = x64.cast();
    let scfg = ck.config.sampler.to_cfg();
    let mut rows: Vec<(String, f64)> = Vec::new();

    let xh: Tensor<f64> = sample::reconstruct(&x, &bundle, &scfg)?.cast();
    rows.push((
        "recon_mse".into(),
        eval::recon_error(&x64, &xh, ReconMetric::Mse)?,
    ));

    let z: Tensor<f64> = bundle.model.encode_mean(&x)?.cast();
    let stats = eval::latent_stats(&z)?;
    if stats.warned {
        eprintln!("warning: latent covariance was singular; used the pseudo-determinant");
    }
    rows.push(("gaussian_tc".into(), stats.gaussian_tc));

    if let Some(labels) = &labels {
        let labels = take_rows(labels, n);
        for c in 0..labels.cols {
            let y = column(&labels, c);
            let binary = is_binary(&y);
            let task = if binary {
                ProbeTask::Classification
            } else {
                ProbeTask::Regression
            };
            let probe = eval::fit_probe(&z, &y, task)?;
            if probe.warned {
                eprintln!("warning: probe on label column {c} did not fully converge");
            }
            let scores = eval::probe_scores(&probe, &z, &y)?;
            let tag = if labels.cols == 1 {
                String::new()
            } else {
                format!("{c}")
            };
            if let Some(auroc) = scores.auroc {
                rows.push((format!("probe{tag}_auroc"), auroc));
            }
            rows.push((format!("probe{tag}_mse"), scores.mse));
            rows.push((format!("probe{tag}_r"), scores.pearson_r));
        }
    }

    if bundle.prior.is_some() {
        let mut rng = stream_from_seed(scfg.seed);
        let gen = sample::generate(
            &bundle,
            x64.rows,
            ck.config.sampler.latent_steps,
            &scfg,
            &mut rng,
        )?;
        let g64: Tensor<f64> = gen.x0.cast();
        rows.push((
            "sliced_wasserstein".into(),
            eval::sliced_wasserstein(&g64, &x64, 128, ck.config.seed)?,
        ));
    } else {
        eprintln!("note: no latent prior in the checkpoint; skipping sample quality metrics");
    }

    let path = cli.out.join("eval.csv");
    csvio::write_eval_csv(&path, &rows, ck.config.hash()?, ck.config.seed)?;
    for (name, value) in &rows {
        println!("{name} = {value:.6}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn column(t: &Tensor<f64>, j: usize) -> Tensor<f64> {
    let vals: Vec<f64> = (0..t.rows).map(|i| t.get(i, j)).collect();
    Tensor::from_vec(t.rows, 1, vals)
}

fn is_binary(y: &Tensor<f64>) -> bool {
    let mut saw = [false, false];
    for &v in &y.data {
        if v == 0.0 {
            saw[0] = true;
        } else if v == 1.0 {
            saw[1] = true;
        } else {
            return false;
        }
    }
    saw[0] && saw[1]
}

fn cmd_make_toy(cli: &Cli, kind: &str, n: usize, path: Option<&Path>) -> Result<()> {
    let kind = toy::ToyKind::parse(kind)?;
    let seed = cli.seed.unwrap_or(0);
    let (data, labels) = toy::make_toy(kind, n, seed)?;
    let path = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out.join(format!("{}.dbt", kind.as_str())));
    dataset::save_dataset(&path, &data, Some(&labels))?;
    println!(
        "wrote {} rows of {} to {} (labels alongside)",
        n,
        kind.as_str(),
        path.display()
    );
    Ok(())
}

fn check(ok: bool, name: &str, failures: &mut u32) {
    if ok {
        println!("ok: {name}");
    } else {
        println!("FAILED: {name}");
        *failures += 1;
    }
}

/// Fast identity checks over the closed forms the library exposes.
fn cmd_selftest() -> Result<()> {
    use dbae::model::{EncoderMode, ModelCfg};
    use dbae::schedule::VpSchedule;
    use dbae::train::{build_ae_loss, draw_ae_noise, LossForm};

    let mut failures = 0u32;

    // variance preservation and the noise-ratio identity
    let sched = VpSchedule::linear(0.1, 20.0, 1.0)?;
    let mut ok_ab = true;
    let mut ok_r = true;
    let (a_end, s_end) = sched.alpha_sigma(1.0)?;
    for k in 1..20 {
        let t = k as f64 / 20.0;
        let (a, s) = sched.alpha_sigma(t)?;
        ok_ab &= (a * a + s * s - 1.0).abs() < 1e-12;
        let direct = (s * s / (a * a)) * (a_end * a_end / (s_end * s_end));
        ok_r &= (sched.snr_ratio(t)? - direct).abs() < 1e-10;
    }
    check(ok_ab, "schedule preserves variance", &mut failures);
    check(ok_r, "noise ratio matches its direct form", &mut failures);

    // bridge posterior interpolates the endpoints
    let bridge = BridgeKernel::new(sched.clone());
    let mut ok_w = true;
    for k in 1..10 {
        let t = bridge.t_lo() + (bridge.t_hi() - bridge.t_lo()) * k as f64 / 10.0;
        let (w0, wend, sig) = bridge.posterior_weights(t)?;
        ok_w &= w0.is_finite() && wend.is_finite() && sig >= 0.0;
    }
    let (w0_lo, _, sig_lo) = bridge.posterior_weights(bridge.t_lo())?;
    ok_w &= (w0_lo - 1.0).abs() < 1e-2 && sig_lo < 0.1;
    let (_, wend_hi, _) = bridge.posterior_weights(bridge.t_hi())?;
    ok_w &= (wend_hi - 1.0).abs() < 1e-2;
    check(ok_w, "bridge posterior pins both endpoints", &mut failures);

    // the three loss forms agree where they must
    let cfg = ModelCfg {
        x_dim: 3,
        z_dim: 2,
        enc_hidden: vec![8],
        dec_hidden: vec![8],
        score_hidden: vec![8],
        time_embed_dim: 4,
        encoder_mode: EncoderMode::Gaussian,
        use_z_condition: true,
    };
    let mut rng = stream_from_seed(17);
    let model: DbaeModel<f64> = DbaeModel::new(cfg, BridgeKernel::new(sched), &mut rng)?;
    let mut ok_loss = true;
    for _ in 0..5 {
        let batch = Tensor::<f64>::randn(8, 3, 1.0, &mut rng);
        let draws = draw_ae_noise(&model, 8, &mut rng);
        let mut vals = Vec::new();
        for form in [LossForm::ScoreMatching, LossForm::X0Weighted] {
            let mut tape = dbae::nn::tape::Tape::new();
            let g = build_ae_loss(&mut tape, &model, &batch, &draws, form, None, false)?;
            vals.push(tape.scalar_value(g.ae));
        }
        ok_loss &= ((vals[0] - vals[1]) / vals[0].abs().max(1e-300)).abs() < 1e-9;
    }
    check(
        ok_loss,
        "score-matching and weighted losses agree",
        &mut failures,
    );

    // rank statistic on a hand-checked tie case
    let scores = [0.1, 0.4, 0.4, 0.8];
    let labels = [0.0, 0.0, 1.0, 1.0];
    check(
        (eval::auroc(&scores, &labels)? - 0.875).abs() < 1e-15,
        "rank statistic handles ties by average rank",
        &mut failures,
    );

    // binary tensor container round trips bitwise
    let dir = std::env::temp_dir().join(format!("dbae-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let t = Tensor::from_vec(2, 3, vec![0.1, -0.2, 3.0e-7, 4.0, 5.5, -6.25]);
    let p = dir.join("t.dbt");
    tensor_file::save_matrix_f64(&p, &t)?;
    let back = tensor_file::load_matrix(&p)?;
    let bits_match = t
        .data
        .iter()
        .zip(&back.data)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    check(bits_match, "tensor container round trips bitwise", &mut failures);
    let _ = std::fs::remove_dir_all(&dir);

    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} self tests failed")));
    }
    println!("all self tests passed");
    Ok(())
}
