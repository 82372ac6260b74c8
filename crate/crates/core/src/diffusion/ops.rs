use crate::error::{invalid, Result, SagdError};
use crate::scalar::Real;
use crate::spectral::{sample_shaped_noise, AnisotropicCovariance, NoiseMode, SpectralWeight};
use crate::tensor::TensorField;

use super::schedule::DiffusionSchedule;

/// Draws `N(0, Σ_w)` noise shaped like `like`.
pub fn noise_like<R: Real>(like: &TensorField<R>, cov: &AnisotropicCovariance<R>, seed: u64) -> Result<TensorField<R>> {
    let channels = match (cov.is_fourier(), like.image_dims()) {
        (true, Some((c, _, _))) => c,
        (true, None) => {
            return Err(SagdError::ShapeMismatch(format!(
                "Fourier covariance needs image fields, got {:?}",
                like.shape()
            )))
        }
        (false, _) => 1,
    };
    let eps = sample_shaped_noise(cov, like.batch(), channels, seed, NoiseMode::Raw)?;
    if cov.is_fourier() {
        like.check_same_shape(&eps)?;
        Ok(eps)
    } else {
        if eps.sample_len() != like.sample_len() {
            return Err(SagdError::ShapeMismatch(format!(
                "covariance dim {} vs sample length {}",
                cov.dim(),
                like.sample_len()
            )));
        }
        eps.reshape(like.shape().to_vec())
    }
}

/// `x_t = √ᾱ_t·x₀ + σ_t·ε`, `ε ~ N(0, Σ_w)`; returns `(x_t, ε)`.
pub fn forward_sample<R: Real>(
    x0: &TensorField<R>,
    t: usize,
    sched: &DiffusionSchedule<R>,
    cov: &AnisotropicCovariance<R>,
    seed: u64,
) -> Result<(TensorField<R>, TensorField<R>)> {
    sched.check_step(t)?;
    let eps = noise_like(x0, cov, seed)?;
    let xt = x0.lin_comb(sched.alpha_bar(t).sqrt(), &eps, sched.sigma(t))?;
    Ok((xt, eps))
}

/// `s = -(1/σ_t)·Σ_w⁺·ε̂`.
///
/// With a singular `Σ_w` the pseudoinverse yields the score projected onto
/// `range(Σ_w)`.
pub fn score_from_eps<R: Real>(
    eps_hat: &TensorField<R>,
    t: usize,
    sched: &DiffusionSchedule<R>,
    cov: &AnisotropicCovariance<R>,
    zero_tol_rel: f64,
) -> Result<TensorField<R>> {
    sched.check_step(t)?;
    let sigma = sched.sigma(t);
    if !(sigma > R::zero()) {
        return Err(SagdError::DegenerateNoiseLevel(format!("sigma_{t} = 0")));
    }
    Ok(cov.apply_pinv(eps_hat, zero_tol_rel)?.scaled(-R::one() / sigma))
}

/// `ε = -σ_t·Σ_w·s`.
pub fn eps_from_score<R: Real>(
    score: &TensorField<R>,
    t: usize,
    sched: &DiffusionSchedule<R>,
    cov: &AnisotropicCovariance<R>,
) -> Result<TensorField<R>> {
    sched.check_step(t)?;
    Ok(cov.apply(score)?.scaled(-sched.sigma(t)))
}

/// `x̂₀ = (x_t - σ_t·ε̂) / √ᾱ_t`.
pub fn x0_from_eps<R: Real>(
    xt: &TensorField<R>,
    eps_hat: &TensorField<R>,
    t: usize,
    sched: &DiffusionSchedule<R>,
) -> Result<TensorField<R>> {
    sched.check_step(t)?;
    let sab = sched.alpha_bar(t).sqrt();
    if !(sab > R::zero()) {
        return Err(SagdError::DegenerateNoiseLevel(format!("alpha_bar_{t} = 0")));
    }
    xt.lin_comb(R::one() / sab, eps_hat, -sched.sigma(t) / sab)
}

/// Mean and scalar variance factor of `q(x_{t-1} | x_t, x₀) = N(μ̃, β̃_t·Σ_w)`.
pub fn posterior_params<R: Real>(
    xt: &TensorField<R>,
    x0: &TensorField<R>,
    t: usize,
    sched: &DiffusionSchedule<R>,
) -> Result<(TensorField<R>, R)> {
    sched.check_step(t)?;
    let alpha = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    let k = (R::one() - alpha) / (R::one() - ab);
    let inv_sa = R::one() / alpha.sqrt();
    // μ̃ = (x_t - k (x_t - √ᾱ x₀)) / √α
    let mu = xt.lin_comb(inv_sa * (R::one() - k), x0, inv_sa * k * ab.sqrt())?;
    Ok((mu, sched.beta_tilde(t)))
}

/// DDIM update with `η = 0` between arbitrary signal levels.
pub fn ddim_update<R: Real>(
    xt: &TensorField<R>,
    eps_hat: &TensorField<R>,
    alpha_bar_t: R,
    alpha_bar_prev: R,
) -> Result<TensorField<R>> {
    let sab = alpha_bar_t.sqrt();
    let x0_coef = alpha_bar_prev.sqrt() / sab;
    let sigma_t = (R::one() - alpha_bar_t).max(R::zero()).sqrt();
    let sigma_prev = (R::one() - alpha_bar_prev).max(R::zero()).sqrt();
    // √ᾱ' (x_t - σ ε)/√ᾱ + σ' ε
    xt.lin_comb(x0_coef, eps_hat, sigma_prev - x0_coef * sigma_t)
}

/// Deterministic step `t → t_prev`: `√ᾱ_{t'}·x̂₀ + √(1-ᾱ_{t'})·ε̂`.
///
/// `Σ_w` only enters through `ε̂`.
pub fn ddim_step<R: Real>(
    xt: &TensorField<R>,
    eps_hat: &TensorField<R>,
    t: usize,
    t_prev: usize,
    sched: &DiffusionSchedule<R>,
) -> Result<TensorField<R>> {
    sched.check_step(t)?;
    if t_prev >= t {
        return invalid(format!("DDIM step must go backwards, got {t} -> {t_prev}"));
    }
    ddim_update(xt, eps_hat, sched.alpha_bar(t), sched.alpha_bar(t_prev))
}

/// Ancestral step `t → t-1` with `N(0, β̃_t·Σ_w)` injected noise (none at
/// `t = 1`).
pub fn ddpm_step<R: Real>(
    xt: &TensorField<R>,
    eps_hat: &TensorField<R>,
    t: usize,
    sched: &DiffusionSchedule<R>,
    cov: &AnisotropicCovariance<R>,
    seed: u64,
) -> Result<TensorField<R>> {
    let x0_hat = x0_from_eps(xt, eps_hat, t, sched)?;
    let (mu, beta_tilde) = posterior_params(xt, &x0_hat, t, sched)?;
    if t == 1 || beta_tilde == R::zero() {
        return Ok(mu);
    }
    let eta = noise_like(xt, cov, seed)?;
    mu.lin_comb(R::one(), &eta, beta_tilde.sqrt())
}

/// Per-Fourier-bin variance of `x_t | x₀` when step `s` uses weight `w_s`:
/// `Σ_s β_s Π_{k>s} α_k |w_s|²`, with `t = weights.len()`.
pub fn timevarying_marginal_cov<R: Real>(
    sched: &DiffusionSchedule<R>,
    weights: &[SpectralWeight<R>],
) -> Result<Vec<R>> {
    let t = weights.len();
    sched.check_step(t)?;
    let grid = weights[0].grid();
    if weights.iter().any(|w| w.grid() != grid) {
        return invalid("all per-step weights must share one grid");
    }
    let mut var = vec![R::zero(); grid.len()];
    for (s, w) in weights.iter().enumerate() {
        let step = s + 1;
        let tail: R = (step + 1..=t).map(|k| sched.alpha(k)).fold(R::one(), |a, b| a * b);
        let coef = sched.beta(step) * tail;
        for (v, p) in var.iter_mut().zip(w.power()) {
            *v = *v + coef * p;
        }
    }
    Ok(var)
}
