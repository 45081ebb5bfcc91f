//! Diffusion bridge autoencoder at desk scale.
//!
//! An autoencoder whose decoder does not emit the reconstruction
//! directly: it emits the terminal state `x_T` of a diffusion bridge.
//! The encoder maps data `x_0` to a low-dimensional latent `z`, the
//! decoder maps `z` to an endpoint `x_T = Dec(z)`, and a pinned
//! diffusion bridge (a Doob h-transform of a variance-preserving
//! forward SDE) connects `x_0` and `x_T`. A score network trained by
//! bridge score matching reverses the bridge, so reconstruction is a
//! deterministic ODE solve from `x_T` back to `x_0`, and `z` is the
//! sole information bottleneck. A small latent diffusion model fitted
//! over encoded `z` provides unconditional generation.
//!
//! Module map:
//!
//! - [`schedule`]: variance-preserving schedule, alpha/sigma/SNR math.
//! - [`bridge`]: closed-form bridge posterior, h-transform drift,
//!   analytic scores, and the exact x0-prediction coefficients.
//! - [`nn`]: dense tensors, tape reverse-mode autodiff, Adam, EMA.
//! - [`model`]: encoder, decoder, score network, pred-x parameterization.
//! - [`train`]: autoencoding loss (three equivalent forms), total
//!   correlation regularizer, latent prior loss, training loops.
//! - [`sample`]: reverse ODE/SDE integrators, latent DDIM, and the
//!   user-facing reconstruct/generate/interpolate/manipulate flows.
//! - [`eval`]: reconstruction error, linear probes, sliced Wasserstein,
//!   latent statistics, and the mutual-information bound diagnostic.
//! - [`io`]: tensor files, checkpoints, run configuration, toy
//!   datasets, metric streams, and PGM grids.
//!
//! Every closed-form identity is exposed as a plain function so the
//! test suite can verify it against independent oracles (finite
//! differences, quadrature, Monte Carlo simulation).

pub mod bridge;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sample;
pub mod schedule;
pub mod train;

pub use nn::Real;

/// Crate-wide error type.
///
/// Variants mirror the failure classes of the public operations:
/// mathematical domain violations, bridge singularities, tensor shape
/// mismatches, API contract breaches, and the three operational
/// classes (config, data, numeric) that the CLI maps to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Evaluation at or beyond a singular point (vanishing bridge
    /// variance near the terminal time).
    #[error("singularity: {0}")]
    Singularity(String),
    /// Tensor shape or dimension mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// API contract violation (missing rng, missing conditioning, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Malformed or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed dataset, tensor file, or checkpoint.
    #[error("data error: {0}")]
    Data(String),
    /// Numerical fault during training or sampling (NaN or Inf).
    #[error("numeric fault: {0}")]
    Numeric(String),
    /// Underlying filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
