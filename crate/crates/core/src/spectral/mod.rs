//! Spectral weights, the shaped-noise covariance they induce, and samplers.

mod covariance;
mod fft;
mod grid;
mod noise;
mod weight;

pub use covariance::{AnisotropicCovariance, Basis, DEFAULT_ZERO_TOL};
pub use fft::Fft2;
pub use grid::{dft_frequency, FrequencyGrid};
pub use noise::{sample_shaped_noise, sample_shaped_noise_range, NoiseMode};
pub use weight::{Band, SpectralWeight, DEFAULT_FLOOR};
