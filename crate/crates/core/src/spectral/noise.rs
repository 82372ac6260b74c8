use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Result, SagdError};
use crate::rng;
use crate::scalar::Real;
use crate::tensor::TensorField;

use super::covariance::{AnisotropicCovariance, Basis};
use super::fft::Fft2;

/// Post-processing applied to shaped noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseMode {
    /// Exactly `N(0, Σ_w)`.
    #[default]
    Raw,
    /// Each plane divided by its own (population) standard deviation plus 1e-8.
    PerSampleStd,
    /// Multiplied by the energy-preserving scalar of the weight.
    EnergyCalibrated,
}

const STD_GUARD: f64 = 1e-8;

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::Raw => "raw",
            NoiseMode::PerSampleStd => "per_sample_std",
            NoiseMode::EnergyCalibrated => "energy_calibrated",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = SagdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(NoiseMode::Raw),
            "per_sample_std" => Ok(NoiseMode::PerSampleStd),
            "energy_calibrated" => Ok(NoiseMode::EnergyCalibrated),
            other => invalid(format!("unknown noise mode `{other}`")),
        }
    }
}

/// Draws `batch` samples of shaped noise.
///
/// Fourier covariances yield `(batch, channels, H, W)` fields with every
/// channel shaped independently; explicit covariances yield `(batch, dim)`
/// vectors and require `channels == 1`.
pub fn sample_shaped_noise<R: Real>(
    cov: &AnisotropicCovariance<R>,
    batch: usize,
    channels: usize,
    seed: u64,
    mode: NoiseMode,
) -> Result<TensorField<R>> {
    sample_shaped_noise_range(cov, 0, batch, channels, seed, mode).map(|(t, _)| t)
}

/// Draws samples `first..first + count` of the stream identified by `seed`.
///
/// Sample `i` depends only on `(seed, i, channel)`, so splitting a batch
/// into ranges reproduces the unsplit result exactly. Also returns the
/// largest imaginary residue discarded by the inverse transform.
pub fn sample_shaped_noise_range<R: Real>(
    cov: &AnisotropicCovariance<R>,
    first: usize,
    count: usize,
    channels: usize,
    seed: u64,
    mode: NoiseMode,
) -> Result<(TensorField<R>, R)> {
    if channels == 0 {
        return invalid("channel count must be positive");
    }
    let calibration = match mode {
        NoiseMode::EnergyCalibrated => {
            if !cov.is_fourier() {
                return invalid("energy calibration needs a weight-derived (Fourier) covariance");
            }
            let mean_power = cov.eigenvalues().iter().map(|l| l.as_f64()).sum::<f64>() / cov.dim() as f64;
            if mean_power <= 0.0 {
                return Err(SagdError::DegenerateWeight);
            }
            Some(R::of(mean_power.powf(-0.5)))
        }
        _ => None,
    };
    let amplitude: Vec<R> = cov.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let mut residue = R::zero();
    let mut out = match cov.basis() {
        Basis::Fourier { height, width } => {
            let (h, w) = (*height, *width);
            let fft = Fft2::new(h, w);
            let mut out = TensorField::images(count, channels, h, w);
            let mut white = vec![R::zero(); h * w];
            for (k, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
                let (sample, channel) = (first + k / channels, k % channels);
                rng::fill_standard_normal(&mut rng::stream(seed, sample as u64, channel as u64), &mut white);
                residue = residue.max(fft.filter_real(&white, &amplitude, plane));
            }
            out
        }
        Basis::Explicit(u) => {
            if channels != 1 {
                return invalid("explicit-basis noise is vector valued; use channels = 1");
            }
            let d = cov.dim();
            let mut out = TensorField::vectors(count, d);
            let mut white = vec![R::zero(); d];
            for k in 0..count {
                rng::fill_standard_normal(&mut rng::stream(seed, (first + k) as u64, 0), &mut white);
                white.iter_mut().zip(&amplitude).for_each(|(z, &a)| *z = *z * a);
                out.sample_mut(k).copy_from_slice(&u.matvec(&white));
            }
            out
        }
    };
    let unit = match cov.basis() {
        Basis::Fourier { height, width } => height * width,
        Basis::Explicit(_) => cov.dim(),
    };
    match mode {
        NoiseMode::Raw => {}
        NoiseMode::EnergyCalibrated => {
            let c = calibration.expect("set above");
            out.data_mut().iter_mut().for_each(|v| *v = *v * c);
        }
        NoiseMode::PerSampleStd => {
            for chunk in out.data_mut().chunks_mut(unit) {
                let std = population_std(chunk) + R::of(STD_GUARD);
                chunk.iter_mut().for_each(|v| *v = *v / std);
            }
        }
    }
    Ok((out, residue))
}

pub(crate) fn population_std<R: Real>(x: &[R]) -> R {
    let n = R::of_usize(x.len());
    let mean = x.iter().copied().sum::<R>() / n;
    (x.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n).sqrt()
}
