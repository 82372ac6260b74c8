//! Spectrally anisotropic Gaussian diffusion.
//!
//! Forward noise is shaped per frequency by a weight `w(f)`, which makes its
//! covariance `Σ_w` diagonal in the Fourier basis. This crate builds those
//! weights and covariances, the diffusion machinery that uses them (forward
//! marginals, score/noise conversions, posteriors, DDIM and DDPM steps),
//! closed-form Gaussian-mixture oracles, probability-flow integration, a small
//! trainable noise predictor, and spectral diagnostics.
//!
//! All numerical types are generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64` (or `f32` with the `32`
//! suffix).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod diagnostics;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod omission;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod tensor;

pub use error::{Result, SagdError};
pub use scalar::Real;
pub use spectral::{Band, NoiseMode};

pub type FrequencyGrid = spectral::FrequencyGrid<f64>;
pub type SpectralWeight = spectral::SpectralWeight<f64>;
pub type AnisotropicCovariance = spectral::AnisotropicCovariance<f64>;
pub type TensorField = tensor::TensorField<f64>;
pub type Matrix = linalg::Matrix<f64>;

pub type SpectralWeight32 = spectral::SpectralWeight<f32>;
pub type AnisotropicCovariance32 = spectral::AnisotropicCovariance<f32>;
pub type TensorField32 = tensor::TensorField<f32>;
pub type DiffusionSchedule = diffusion::DiffusionSchedule<f64>;
pub type DiffusionSchedule32 = diffusion::DiffusionSchedule<f32>;
pub type NoiseLevel = diffusion::NoiseLevel<f64>;
pub type GaussianMixture = analytic::GaussianMixture<f64>;
