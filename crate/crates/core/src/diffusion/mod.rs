//! Schedules, anisotropic forward marginals and reverse-step updates.

mod ops;
mod schedule;

pub use ops::{
    ddim_step, ddim_update, ddpm_step, eps_from_score, forward_sample, noise_like, posterior_params, score_from_eps,
    timevarying_marginal_cov, x0_from_eps,
};
pub use schedule::{ContinuousBeta, DiffusionSchedule, NoiseLevel};

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::TensorField;

/// Anything that predicts the forward noise `ε` from `(x_t, t)`.
pub trait EpsPredictor<R: Real> {
    fn predict_eps(&self, xt: &TensorField<R>, t: usize) -> Result<TensorField<R>>;
}

impl<R: Real, F> EpsPredictor<R> for F
where
    F: Fn(&TensorField<R>, usize) -> Result<TensorField<R>>,
{
    fn predict_eps(&self, xt: &TensorField<R>, t: usize) -> Result<TensorField<R>> {
        self(xt, t)
    }
}
