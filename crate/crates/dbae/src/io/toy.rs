//! Toy dataset generators.
//!
//! Small synthetic distributions for end-to-end runs and regression
//! baselines. Every generator is a pure function of `(n, seed)` and
//! returns `(data, labels)` as row-major tensors; label tensors carry
//! one column unless stated otherwise.

use crate::nn::Tensor;
use crate::rng::stream_from_seed;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Available synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    /// Two interleaved half circles in the plane, binary labels.
    TwoMoons,
    /// Two concentric rings, binary labels.
    Circles,
    /// Mixture of eight Gaussians on a ring, labels 0..8.
    EightGaussians,
    /// Uniform square with alternating-cell labels.
    Checkerboard,
    /// 8x8 grayscale glyphs with three binary attributes; labels have
    /// one column per attribute.
    Shapes8,
}

impl ToyKind {
    pub fn parse(s: &str) -> Result<ToyKind> {
        match s {
            "two_moons" => Ok(ToyKind::TwoMoons),
            "circles" => Ok(ToyKind::Circles),
            "eight_gaussians" => Ok(ToyKind::EightGaussians),
            "checkerboard" => Ok(ToyKind::Checkerboard),
            "shapes8" => Ok(ToyKind::Shapes8),
            other => Err(Error::Config(format!("unknown toy dataset '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ToyKind::TwoMoons => "two_moons",
            ToyKind::Circles => "circles",
            ToyKind::EightGaussians => "eight_gaussians",
            ToyKind::Checkerboard => "checkerboard",
            ToyKind::Shapes8 => "shapes8",
        }
    }
}

/// Draws `n` samples of the requested dataset.
pub fn make_toy(kind: ToyKind, n: usize, seed: u64) -> Result<(Tensor<f64>, Tensor<f64>)> {
    if n == 0 {
        return Err(Error::Data("dataset size must be positive".into()));
    }
    Ok(match kind {
        ToyKind::TwoMoons => two_moons(n, seed),
        ToyKind::Circles => circles(n, seed),
        ToyKind::EightGaussians => eight_gaussians(n, seed),
        ToyKind::Checkerboard => checkerboard(n, seed),
        ToyKind::Shapes8 => shapes8(n, seed),
    })
}

fn two_moons(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = stream_from_seed(seed);
    let noise = 0.05;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (mut x, mut y) = if i % 2 == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        x += noise * ex;
        y += noise * ey;
        // center the union of the two arcs at the origin
        data.push(x - 0.5);
        data.push(y - 0.25);
        labels.push((i % 2) as f64);
    }
    (Tensor::from_vec(n, 2, data), Tensor::from_vec(n, 1, labels))
}

fn circles(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = stream_from_seed(seed);
    let noise = 0.05;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let r = if i % 2 == 0 { 1.0 } else { 0.5 };
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        data.push(r * theta.cos() + noise * ex);
        data.push(r * theta.sin() + noise * ey);
        labels.push((i % 2) as f64);
    }
    (Tensor::from_vec(n, 2, data), Tensor::from_vec(n, 1, labels))
}

fn eight_gaussians(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = stream_from_seed(seed);
    let radius = 2.0;
    let std = 0.2;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 8;
        let angle = std::f64::consts::TAU * (k as f64) / 8.0;
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        data.push(radius * angle.cos() + std * ex);
        data.push(radius * angle.sin() + std * ey);
        labels.push(k as f64);
    }
    (Tensor::from_vec(n, 2, data), Tensor::from_vec(n, 1, labels))
}

fn checkerboard(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = stream_from_seed(seed);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-2.0..2.0);
        let y: f64 = rng.random_range(-2.0..2.0);
        let parity = ((x.floor() as i64) + (y.floor() as i64)).rem_euclid(2);
        data.push(x);
        data.push(y);
        labels.push(parity as f64);
    }
    (Tensor::from_vec(n, 2, data), Tensor::from_vec(n, 1, labels))
}

/// 8x8 glyphs controlled by three independent fair coins per sample:
/// glyph shape (filled 3x3 square vs 5-pixel plus), placement (upper
/// left vs lower right block), and brightness (1.0 vs 0.6). Gaussian
/// pixel noise of standard deviation 0.02 is added and the image is
/// clamped to [0, 1].
fn shapes8(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = stream_from_seed(seed);
    let side = 8usize;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let square = rng.random_range(0..2u32) == 1;
        let top_left = rng.random_range(0..2u32) == 1;
        let bright = rng.random_range(0..2u32) == 1;
        let (r0, c0) = if top_left { (1usize, 1usize) } else { (4, 4) };
        let level = if bright { 1.0 } else { 0.6 };
        let mut img = vec![0.0f64; side * side];
        if square {
            for r in r0..r0 + 3 {
                for c in c0..c0 + 3 {
                    img[r * side + c] = level;
                }
            }
        } else {
            // plus sign inscribed in the same 3x3 block
            img[r0 * side + (c0 + 1)] = level;
            img[(r0 + 1) * side + c0] = level;
            img[(r0 + 1) * side + (c0 + 1)] = level;
            img[(r0 + 1) * side + (c0 + 2)] = level;
            img[(r0 + 2) * side + (c0 + 1)] = level;
        }
        for p in img.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *p = (*p + 0.02 * e).clamp(0.0, 1.0);
        }
        data.extend_from_slice(&img);
        labels.push(square as u32 as f64);
        labels.push(top_left as u32 as f64);
        labels.push(bright as u32 as f64);
    }
    (
        Tensor::from_vec(n, side * side, data),
        Tensor::from_vec(n, 3, labels),
    )
}
