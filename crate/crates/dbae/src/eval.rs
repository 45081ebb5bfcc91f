//! Evaluation metrics.
//!
//! Four groups of tools live here:
//!
//! - reconstruction error between a batch and its reconstruction
//!   (mean squared error, or a windowed SSIM for square grid data),
//! - linear probes fit on latents (closed-form ridge regression and a
//!   Newton logistic fit) with AUROC / MSE / Pearson scoring,
//! - distribution distances and latent moment summaries (sliced
//!   Wasserstein distance, per-dimension statistics, and the
//!   Gaussian-fit total correlation),
//! - a mutual-information bound diagnostic evaluated in closed form
//!   on scalar linear-Gaussian instances, where the autoencoding
//!   objective, the data entropy, and the mutual information are all
//!   analytic and the bound `-MI <= L_AE - H` can be checked exactly.
//!
//! Everything is pure: no randomness except where a seed is an
//! explicit argument.

use crate::bridge::DEFAULT_EPS_T;
use crate::linalg;
use crate::nn::Tensor;
use crate::rng::stream_from_seed;
use crate::schedule::VpSchedule;
use crate::{Error, Result};

/// Reconstruction distance selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMetric {
    /// Mean squared error over all entries.
    Mse,
    /// Mean structural similarity over sliding 4x4 windows; rows must
    /// be flattened square grids with side at least 4. Returns the
    /// similarity (1 for identical batches), not a distance.
    SsimWindow,
}

/// Batch-mean reconstruction metric between matched batches.
pub fn recon_error(x0: &Tensor<f64>, x0_hat: &Tensor<f64>, metric: ReconMetric) -> Result<f64> {
    if !x0.same_shape(x0_hat) {
        return Err(Error::Shape(format!(
            "recon_error needs matched shapes, got {}x{} vs {}x{}",
            x0.rows, x0.cols, x0_hat.rows, x0_hat.cols
        )));
    }
    if x0.rows == 0 || x0.cols == 0 {
        return Err(Error::Data("recon_error on an empty batch".into()));
    }
    match metric {
        ReconMetric::Mse => {
            let n = (x0.rows * x0.cols) as f64;
            let s: f64 = x0
                .data
                .iter()
                .zip(&x0_hat.data)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            Ok(s / n)
        }
        ReconMetric::SsimWindow => {
            let side = (x0.cols as f64).sqrt().round() as usize;
            if side * side != x0.cols || side < 4 {
                return Err(Error::Contract(format!(
                    "ssim needs flattened square grids with side >= 4, got {} columns",
                    x0.cols
                )));
            }
            let mut acc = 0.0;
            for i in 0..x0.rows {
                acc += ssim_grid(x0.row(i), x0_hat.row(i), side);
            }
            Ok(acc / x0.rows as f64)
        }
    }
}

/// SSIM of two flattened `side x side` grids with uniform 4x4 sliding
/// windows (stride 1), population moments per window, and the usual
/// stabilizers for unit dynamic range: c1 = 0.01^2, c2 = 0.03^2.
fn ssim_grid(a: &[f64], b: &[f64], side: usize) -> f64 {
    const W: usize = 4;
    const C1: f64 = 1e-4;
    const C2: f64 = 9e-4;
    let nw = W * W;
    let mut acc = 0.0;
    let positions = side - W + 1;
    for i0 in 0..positions {
        for j0 in 0..positions {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in i0..i0 + W {
                for j in j0..j0 + W {
                    ma += a[i * side + j];
                    mb += b[i * side + j];
                }
            }
            ma /= nw as f64;
            mb /= nw as f64;
            let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
            for i in i0..i0 + W {
                for j in j0..j0 + W {
                    let da = a[i * side + j] - ma;
                    let db = b[i * side + j] - mb;
                    va += da * da;
                    vb += db * db;
                    cab += da * db;
                }
            }
            va /= nw as f64;
            vb /= nw as f64;
            cab /= nw as f64;
            acc += ((2.0 * ma * mb + C1) * (2.0 * cab + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    acc / (positions * positions) as f64
}

/// Probe flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTask {
    /// Ridge least squares; labels may have any number of columns.
    Regression,
    /// Logistic fit; labels must be a single 0/1 column with both
    /// classes present.
    Classification,
}

/// Affine probe `y_hat = z w + b` fit on latents.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    /// Weights, latent dimension by output dimension.
    pub w: Tensor<f64>,
    /// Per-output intercept.
    pub b: Vec<f64>,
    pub task: ProbeTask,
    /// True when a fallback fired: escalated ridge on rank-deficient
    /// features, or a logistic fit that hit its iteration cap.
    pub warned: bool,
}

/// Probe quality summary. `auroc` is present only for classification.
#[derive(Debug, Clone, Copy)]
pub struct ProbeScores {
    pub auroc: Option<f64>,
    pub mse: f64,
    pub pearson_r: f64,
}

/// Fits a linear probe.
///
/// Regression solves centered least squares in closed form, starting
/// with no ridge and escalating the ridge only if the Gram matrix is
/// not positive definite (rank-deficient features); the escalation is
/// reported through `warned`. Classification runs a damped Newton
/// logistic fit with a tiny l2 penalty (1e-6) for uniqueness.
pub fn fit_probe(z: &Tensor<f64>, labels: &Tensor<f64>, task: ProbeTask) -> Result<ProbeModel> {
    if z.rows != labels.rows {
        return Err(Error::Shape(format!(
            "probe needs matched row counts, got {} latents vs {} labels",
            z.rows, labels.rows
        )));
    }
    if z.rows < 2 {
        return Err(Error::Data(format!(
            "probe needs at least 2 samples, got {}",
            z.rows
        )));
    }
    match task {
        ProbeTask::Regression => fit_ridge(z, labels),
        ProbeTask::Classification => fit_logistic(z, labels),
    }
}

fn fit_ridge(z: &Tensor<f64>, y: &Tensor<f64>) -> Result<ProbeModel> {
    let (n, l, k) = (z.rows, z.cols, y.cols);
    let zm = linalg::mean_rows(z);
    let ym = linalg::mean_rows(y);
    // centered Gram matrix and cross products
    let mut gram = Tensor::zeros(l, l);
    for i in 0..n {
        for a in 0..l {
            let da = z.get(i, a) - zm[a];
            for b in a..l {
                let db = z.get(i, b) - zm[b];
                gram.data[a * l + b] += da * db;
            }
        }
    }
    for a in 0..l {
        for b in a..l {
            let v = gram.get(a, b);
            gram.set(b, a, v);
        }
    }
    let mut cross = vec![vec![0.0; l]; k];
    for i in 0..n {
        for (c, cross_c) in cross.iter_mut().enumerate() {
            let dy = y.get(i, c) - ym[c];
            for (a, cc) in cross_c.iter_mut().enumerate() {
                *cc += (z.get(i, a) - zm[a]) * dy;
            }
        }
    }
    let scale = (0..l).map(|a| gram.get(a, a)).sum::<f64>() / l as f64;
    let scale = scale.max(f64::MIN_POSITIVE);
    let mut warned = false;
    let mut solved: Option<Vec<Vec<f64>>> = None;
    for &factor in &[0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
        let mut a = gram.clone();
        for d in 0..l {
            a.data[d * l + d] += factor * scale;
        }
        if linalg::cholesky(&a).is_err() {
            warned = true;
            continue;
        }
        let mut cols = Vec::with_capacity(k);
        for rhs in &cross {
            cols.push(linalg::solve_spd(&a, rhs)?);
        }
        solved = Some(cols);
        break;
    }
    let cols = solved.ok_or_else(|| {
        Error::Data("probe features are degenerate even under heavy ridge".into())
    })?;
    let mut w = Tensor::zeros(l, k);
    let mut b = vec![0.0; k];
    for (c, col) in cols.iter().enumerate() {
        let mut bc = ym[c];
        for (a, &wac) in col.iter().enumerate() {
            w.set(a, c, wac);
            bc -= wac * zm[a];
        }
        b[c] = bc;
    }
    Ok(ProbeModel {
        w,
        b,
        task: ProbeTask::Regression,
        warned,
    })
}

fn fit_logistic(z: &Tensor<f64>, y: &Tensor<f64>) -> Result<ProbeModel> {
    if y.cols != 1 {
        return Err(Error::Data(format!(
            "classification probe needs one label column, got {}",
            y.cols
        )));
    }
    let n = z.rows;
    let l = z.cols;
    let mut pos = 0usize;
    for i in 0..n {
        let v = y.get(i, 0);
        if v != 0.0 && v != 1.0 {
            return Err(Error::Data(format!("labels must be 0 or 1, got {v}")));
        }
        if v == 1.0 {
            pos += 1;
        }
    }
    if pos == 0 || pos == n {
        return Err(Error::Data("classification probe needs both classes".into()));
    }
    const LAMBDA: f64 = 1e-6;
    let dim = l + 1; // weights then intercept
    let mut theta = vec![0.0; dim];
    let logit = |theta: &[f64], i: usize| -> f64 {
        let mut s = theta[l];
        for a in 0..l {
            s += theta[a] * z.get(i, a);
        }
        s
    };
    // stable ln(1 + exp(s))
    let softplus = |s: f64| s.max(0.0) + (-s.abs()).exp().ln_1p();
    let loss = |theta: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            let s = logit(theta, i);
            acc += softplus(s) - y.get(i, 0) * s;
        }
        acc + 0.5 * LAMBDA * theta[..l].iter().map(|w| w * w).sum::<f64>()
    };
    let mut converged = false;
    let mut cur = loss(&theta);
    for _ in 0..100 {
        // gradient and Hessian of the penalized log loss
        let mut grad = vec![0.0; dim];
        let mut hess = Tensor::zeros(dim, dim);
        for i in 0..n {
            let p = 1.0 / (1.0 + (-logit(&theta, i)).exp());
            let r = p - y.get(i, 0);
            let wii = (p * (1.0 - p)).max(1e-12);
            for a in 0..dim {
                let fa = if a < l { z.get(i, a) } else { 1.0 };
                grad[a] += r * fa;
                for b in a..dim {
                    let fb = if b < l { z.get(i, b) } else { 1.0 };
                    hess.data[a * dim + b] += wii * fa * fb;
                }
            }
        }
        for a in 0..l {
            grad[a] += LAMBDA * theta[a];
            hess.data[a * dim + a] += LAMBDA;
        }
        for a in 0..dim {
            for b in a..dim {
                let v = hess.get(a, b);
                hess.set(b, a, v);
            }
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < 1e-9 {
            converged = true;
            break;
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = linalg::solve_spd(&hess, &neg)?;
        // backtracking keeps the Newton step inside the decrease region
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, s)| t + alpha * s)
                .collect();
            let cl = loss(&cand);
            if cl <= cur {
                theta = cand;
                cur = cl;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let mut w = Tensor::zeros(l, 1);
    for a in 0..l {
        w.set(a, 0, theta[a]);
    }
    Ok(ProbeModel {
        w,
        b: vec![theta[l]],
        task: ProbeTask::Classification,
        warned: !converged,
    })
}

/// Probe predictions: affine outputs for regression, probabilities
/// (the logistic of the affine score) for classification.
pub fn probe_predict(model: &ProbeModel, z: &Tensor<f64>) -> Result<Tensor<f64>> {
    if z.cols != model.w.rows {
        return Err(Error::Shape(format!(
            "probe expects {} latent dims, got {}",
            model.w.rows, z.cols
        )));
    }
    let k = model.w.cols;
    let mut out = Tensor::zeros(z.rows, k);
    for i in 0..z.rows {
        for c in 0..k {
            let mut s = model.b[c];
            for a in 0..z.cols {
                s += z.get(i, a) * model.w.get(a, c);
            }
            if model.task == ProbeTask::Classification {
                s = 1.0 / (1.0 + (-s).exp());
            }
            out.set(i, c, s);
        }
    }
    Ok(out)
}

/// Scores a fitted probe on labeled latents.
///
/// `mse` and `pearson_r` compare predictions to labels (column-mean
/// Pearson); `auroc` ranks the scores of a classification probe and
/// is `None` for regression.
pub fn probe_scores(model: &ProbeModel, z: &Tensor<f64>, labels: &Tensor<f64>) -> Result<ProbeScores> {
    if z.rows != labels.rows {
        return Err(Error::Shape(format!(
            "probe scoring needs matched row counts, got {} vs {}",
            z.rows, labels.rows
        )));
    }
    if labels.cols != model.w.cols {
        return Err(Error::Shape(format!(
            "probe has {} outputs but labels have {} columns",
            model.w.cols, labels.cols
        )));
    }
    let pred = probe_predict(model, z)?;
    let n = (pred.rows * pred.cols) as f64;
    let mse = pred
        .data
        .iter()
        .zip(&labels.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let mut r = 0.0;
    for c in 0..pred.cols {
        let pc: Vec<f64> = (0..pred.rows).map(|i| pred.get(i, c)).collect();
        let yc: Vec<f64> = (0..pred.rows).map(|i| labels.get(i, c)).collect();
        r += pearson(&pc, &yc);
    }
    r /= pred.cols as f64;
    let auroc_v = if model.task == ProbeTask::Classification {
        let scores: Vec<f64> = (0..pred.rows).map(|i| pred.get(i, 0)).collect();
        let ys: Vec<f64> = (0..labels.rows).map(|i| labels.get(i, 0)).collect();
        Some(auroc(&scores, &ys)?)
    } else {
        None
    };
    Ok(ProbeScores {
        auroc: auroc_v,
        mse,
        pearson_r: r,
    })
}

/// Pearson correlation; 0 when either side is constant.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cab += (x - ma) * (y - mb);
    }
    if va <= 1e-300 || vb <= 1e-300 {
        return 0.0;
    }
    cab / (va * vb).sqrt()
}

/// Area under the ROC curve by the rank statistic, with average ranks
/// on tied scores. Labels must be 0/1 with both classes present.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "auroc needs matched lengths, got {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    let mut pos = 0usize;
    for &y in labels {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Data(format!("labels must be 0 or 1, got {y}")));
        }
        if y == 1.0 {
            pos += 1;
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("auroc needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of the group
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &t in &idx[i..j] {
            if labels[t] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Sliced Wasserstein-2 distance between equal-sized point sets:
/// the mean, over random unit projections, of the exact 1-D
/// Wasserstein-2 distance of the projected samples (sorted pairing).
/// The projection set is a deterministic function of `seed`, so the
/// distance is symmetric and reproducible.
pub fn sliced_wasserstein(
    a: &Tensor<f64>,
    b: &Tensor<f64>,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    if a.rows == 0 || b.rows == 0 {
        return Err(Error::Data("sliced_wasserstein on an empty point set".into()));
    }
    if a.cols != b.cols || a.cols == 0 {
        return Err(Error::Shape(format!(
            "point sets must share a positive dimension, got {} vs {}",
            a.cols, b.cols
        )));
    }
    if a.rows != b.rows {
        return Err(Error::Shape(format!(
            "equal-sized point sets required for the sorted pairing, got {} vs {}",
            a.rows, b.rows
        )));
    }
    if n_projections == 0 {
        return Err(Error::Contract("need at least one projection".into()));
    }
    let d = a.cols;
    let mut rng = stream_from_seed(seed);
    let mut acc = 0.0;
    for _ in 0..n_projections {
        let u;
        loop {
            let g = Tensor::<f64>::randn(1, d, 1.0, &mut rng);
            let norm = g.data.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                u = g.data.iter().map(|x| x / norm).collect::<Vec<f64>>();
                break;
            }
        }
        let mut pa: Vec<f64> = (0..a.rows)
            .map(|i| a.row(i).iter().zip(&u).map(|(x, ui)| x * ui).sum())
            .collect();
        let mut pb: Vec<f64> = (0..b.rows)
            .map(|i| b.row(i).iter().zip(&u).map(|(x, ui)| x * ui).sum())
            .collect();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        let msq = pa
            .iter()
            .zip(&pb)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.rows as f64;
        acc += msq.sqrt();
    }
    Ok(acc / n_projections as f64)
}

/// Moment summary of an encoded dataset.
#[derive(Debug, Clone)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub cov: Tensor<f64>,
    /// Gaussian-fit total correlation,
    /// `(sum_i log cov_ii - log det cov) / 2`; zero for a factorized
    /// Gaussian, positive otherwise.
    pub gaussian_tc: f64,
    /// True when the covariance was singular and the log-determinant
    /// fell back to the pseudo-determinant (positive eigenvalues only).
    pub warned: bool,
}

/// Per-dimension moments, covariance, and the Gaussian-fit total
/// correlation of a latent sample (rows are samples).
pub fn latent_stats(z: &Tensor<f64>) -> Result<LatentStats> {
    if z.rows < z.cols + 1 {
        return Err(Error::Data(format!(
            "latent_stats needs at least dim+1 samples, got {} for dim {}",
            z.rows, z.cols
        )));
    }
    let mean = linalg::mean_rows(z);
    let cov = linalg::covariance(z)?;
    let std: Vec<f64> = (0..z.cols).map(|i| cov.get(i, i).max(0.0).sqrt()).collect();
    let mut warned = false;
    let (diag_sum, logdet) = match linalg::logdet_spd(&cov) {
        Ok(ld) => {
            let ds = (0..z.cols).map(|i| cov.get(i, i).ln()).sum::<f64>();
            (ds, ld)
        }
        Err(_) => {
            // singular fit: drop the null directions on both sides
            warned = true;
            let ev = linalg::sym_eigvals(&cov)?;
            let tol = ev.last().copied().unwrap_or(0.0).max(0.0) * 1e-12;
            let ld = ev.iter().filter(|&&l| l > tol).map(|l| l.ln()).sum::<f64>();
            let ds = (0..z.cols)
                .map(|i| cov.get(i, i))
                .filter(|&v| v > tol)
                .map(|v| v.ln())
                .sum::<f64>();
            (ds, ld)
        }
    };
    Ok(LatentStats {
        mean,
        std,
        cov,
        gaussian_tc: 0.5 * (diag_sum - logdet),
        warned,
    })
}

/// Scalar linear-Gaussian test instance for the information bound.
///
/// Data `x0 ~ N(0, data_var)`; latent `z = enc_gain * x0 + xi` with
/// `xi ~ N(0, enc_noise_var)`; endpoint `x_end = dec_gain * z`. The
/// decoder gain must be nonzero so that conditioning on the endpoint
/// carries exactly the information in `z`. The evaluated score is the
/// exact conditional score of the bridge marginal given `z`, except
/// that it believes the conditional mean of `x0` given `z` is
/// `(1 + mismatch) K z` instead of the true `K z`; `mismatch = 0` is
/// the optimal score for this family.
#[derive(Debug, Clone, Copy)]
pub struct MiInstance {
    pub data_var: f64,
    pub enc_gain: f64,
    pub enc_noise_var: f64,
    pub dec_gain: f64,
    pub mismatch: f64,
}

/// Closed-form evaluation of the information bound on one instance.
#[derive(Debug, Clone, Copy)]
pub struct MiDiagnostic {
    pub instance: MiInstance,
    /// Autoencoding score-matching objective integrated over the
    /// clamped time window.
    pub l_ae: f64,
    /// Differential entropy of the data variable.
    pub entropy: f64,
    /// Mutual information between data and latent.
    pub mi: f64,
    /// Bound left side, `-mi`.
    pub lhs: f64,
    /// Bound right side, `l_ae - entropy`.
    pub rhs: f64,
    /// `rhs - lhs`; the bound holds when this is nonnegative.
    pub slack: f64,
    pub holds: bool,
}

/// Checks the information bound `-MI(x0, z) <= L_AE - H(x0)` on a
/// scalar linear-Gaussian instance where every term is analytic.
///
/// With posterior moments `E[x0|z] = K z`, `Var[x0|z] = C`, bridge
/// weights `a_hat = alpha_t (1 - R)` and variance
/// `s_hat^2 = sigma_t^2 (1 - R)`, the conditional marginal of `x_t`
/// given `z` has variance `V = s_hat^2 + a_hat^2 C`, and the expected
/// squared gap between the evaluated score and the bridge target
/// score reduces to
///
/// ```text
/// E = a_hat^2 (C + (K tau)^2 var_z) / V^2 + a_hat^4 C^2 / (s_hat^2 V^2),
/// ```
///
/// so `L_AE = int (1/2) beta(t) E dt`, integrated by composite
/// Simpson over `[eps_t T, (1 - eps_t) T]` with `nodes` points
/// (forced odd). Entropy and mutual information are the Gaussian
/// closed forms.
pub fn mi_bound_check(
    schedule: &VpSchedule,
    inst: &MiInstance,
    nodes: usize,
) -> Result<MiDiagnostic> {
    if !(inst.data_var > 0.0) || !inst.data_var.is_finite() {
        return Err(Error::Contract(format!(
            "data variance must be positive and finite, got {}",
            inst.data_var
        )));
    }
    if !(inst.enc_noise_var > 0.0) || !inst.enc_noise_var.is_finite() {
        return Err(Error::Contract(format!(
            "encoder noise variance must be positive and finite, got {}",
            inst.enc_noise_var
        )));
    }
    if inst.dec_gain == 0.0 || !inst.dec_gain.is_finite() {
        return Err(Error::Contract(
            "decoder gain must be nonzero so the endpoint determines z".into(),
        ));
    }
    if !inst.enc_gain.is_finite() || !inst.mismatch.is_finite() {
        return Err(Error::Contract("instance parameters must be finite".into()));
    }
    if nodes < 3 {
        return Err(Error::Contract(format!(
            "quadrature needs at least 3 nodes, got {nodes}"
        )));
    }
    let s02 = inst.data_var;
    let var_z = inst.enc_gain * inst.enc_gain * s02 + inst.enc_noise_var;
    let mi = 0.5 * (var_z / inst.enc_noise_var).ln();
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s02).ln();
    let k_gain = inst.enc_gain * s02 / var_z;
    let c_post = s02 - k_gain * inst.enc_gain * s02;
    let s_dev = c_post + (k_gain * inst.mismatch).powi(2) * var_z;

    let t_end = schedule.t_end;
    let (t_lo, t_hi) = (DEFAULT_EPS_T * t_end, (1.0 - DEFAULT_EPS_T) * t_end);
    let nodes = if nodes % 2 == 0 { nodes + 1 } else { nodes };
    let h = (t_hi - t_lo) / (nodes - 1) as f64;
    let mut vals = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let t = t_lo + i as f64 * h;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let r = schedule.snr_ratio(t)?;
        let beta = schedule.beta(t)?;
        let a_hat = alpha * (1.0 - r);
        let s_hat2 = sigma * sigma * (1.0 - r);
        let v_m = s_hat2 + a_hat * a_hat * c_post;
        let gap = a_hat * a_hat * s_dev / (v_m * v_m)
            + a_hat.powi(4) * c_post * c_post / (s_hat2 * v_m * v_m);
        vals.push(0.5 * beta * gap);
    }
    let l_ae = simpson(&vals, h);
    let lhs = -mi;
    let rhs = l_ae - entropy;
    let slack = rhs - lhs;
    Ok(MiDiagnostic {
        instance: *inst,
        l_ae,
        entropy,
        mi,
        lhs,
        rhs,
        slack,
        holds: lhs <= rhs + 1e-9,
    })
}

/// Composite Simpson rule over uniformly spaced values (odd count).
fn simpson(vals: &[f64], h: f64) -> f64 {
    let n = vals.len();
    debug_assert!(n >= 3 && n % 2 == 1);
    let mut acc = vals[0] + vals[n - 1];
    for (i, v) in vals.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}
