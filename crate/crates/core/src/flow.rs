//! Probability-flow transport and reverse samplers over particle ensembles.

use std::fmt;
use std::str::FromStr;

use crate::analytic::GaussianMixture;
use crate::diffusion::{
    ddim_step, ddpm_step, eps_from_score, score_from_eps, ContinuousBeta, DiffusionSchedule, EpsPredictor, NoiseLevel,
};
use crate::error::{invalid, Result, SagdError};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::spectral::{sample_shaped_noise, AnisotropicCovariance, NoiseMode, DEFAULT_ZERO_TOL};
use crate::tensor::TensorField;

/// States beyond this magnitude count as a blow-up.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Default lower end of the flow time interval.
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Particles at a common time.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble<R> {
    states: TensorField<R>,
    time: R,
}

impl<R: Real> ParticleEnsemble<R> {
    /// `states` is `(N, dim)`.
    pub fn new(states: TensorField<R>, time: R) -> Result<Self> {
        if states.shape().len() != 2 {
            return Err(SagdError::ShapeMismatch(format!("particles must be (N, dim), got {:?}", states.shape())));
        }
        if !states.is_finite() {
            return invalid("particle states must be finite");
        }
        if !(time >= R::zero() && time <= R::one()) {
            return invalid(format!("ensemble time {time} outside [0, 1]"));
        }
        Ok(Self { states, time })
    }

    /// `N(0, σ(t)²Σ_w)` draws at time `t`.
    pub fn gaussian_prior(
        cov: &AnisotropicCovariance<R>,
        beta: &ContinuousBeta,
        t: R,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let level = NoiseLevel::continuous(beta, t)?;
        let eps = sample_shaped_noise(cov, n, 1, seed, NoiseMode::Raw)?;
        let eps = eps.reshape(vec![n, cov.dim()])?;
        Self::new(eps.scaled(level.sigma()), t)
    }

    /// Exact draws from the smoothed mixture at time `t`.
    pub fn mixture_marginal(
        gm: &GaussianMixture<R>,
        cov: &AnisotropicCovariance<R>,
        beta: &ContinuousBeta,
        t: R,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let level = NoiseLevel::continuous(beta, t)?;
        Self::new(gm.smoothed(level, cov)?.sample(n, seed), t)
    }

    pub fn states(&self) -> &TensorField<R> {
        &self.states
    }

    pub fn time(&self) -> R {
        self.time
    }

    pub fn len(&self) -> usize {
        self.states.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.sample_len()
    }
}

/// Ensembles recorded at descending times.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrajectory<R> {
    pub times: Vec<R>,
    pub snapshots: Vec<ParticleEnsemble<R>>,
}

impl<R: Real> FlowTrajectory<R> {
    pub fn terminal(&self) -> &ParticleEnsemble<R> {
        self.snapshots.last().expect("trajectories are never empty")
    }

    /// The snapshot whose time is closest to `t`.
    pub fn nearest(&self, t: R) -> &ParticleEnsemble<R> {
        let i = (0..self.times.len())
            .min_by(|&a, &b| {
                let da = (self.times[a] - t).abs();
                let db = (self.times[b] - t).abs();
                da.partial_cmp(&db).expect("finite times")
            })
            .expect("trajectories are never empty");
        &self.snapshots[i]
    }
}

/// Evaluates `∇ log p_t` for a batch of states.
pub trait ScoreFn<R: Real> {
    fn score(&self, x: &TensorField<R>, t: R) -> Result<TensorField<R>>;
}

impl<R: Real, F> ScoreFn<R> for F
where
    F: Fn(&TensorField<R>, R) -> Result<TensorField<R>>,
{
    fn score(&self, x: &TensorField<R>, t: R) -> Result<TensorField<R>> {
        self(x, t)
    }
}

/// Exact score of a mixture smoothed along the continuous schedule.
pub struct MixtureScore<'a, R: Real> {
    pub mixture: &'a GaussianMixture<R>,
    pub covariance: &'a AnisotropicCovariance<R>,
    pub beta: ContinuousBeta,
}

impl<R: Real> ScoreFn<R> for MixtureScore<'_, R> {
    fn score(&self, x: &TensorField<R>, t: R) -> Result<TensorField<R>> {
        let level = NoiseLevel::continuous(&self.beta, t)?;
        self.mixture.smoothed(level, self.covariance)?.score_batch(x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    #[default]
    Heun,
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Heun => "heun",
        })
    }
}

impl FromStr for Integrator {
    type Err = SagdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "heun" => Ok(Self::Heun),
            _ => invalid(format!("unknown integrator {s:?} (expected euler or heun)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    pub steps: usize,
    pub snapshots: usize,
    pub integrator: Integrator,
    pub t_min: f64,
    pub beta: ContinuousBeta,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            snapshots: 5,
            integrator: Integrator::Heun,
            t_min: DEFAULT_T_MIN,
            beta: ContinuousBeta::default(),
        }
    }
}

/// `dx/dt = -½β(t)·x - ½β(t)·Σ_w·∇log p_t(x)`.
pub fn pf_ode_drift<R: Real, S: ScoreFn<R> + ?Sized>(
    x: &TensorField<R>,
    t: R,
    score_fn: &S,
    cov: &AnisotropicCovariance<R>,
    beta: &ContinuousBeta,
) -> Result<TensorField<R>> {
    if !(t > R::zero() && t <= R::one()) {
        return invalid(format!("drift time {t} outside (0, 1]"));
    }
    let s = score_fn.score(x, t)?;
    if !s.is_finite() {
        return Err(SagdError::NonFinite { step: 0, what: format!("score at t = {t}") });
    }
    let half_beta = beta.beta(t) * R::of(0.5);
    x.lin_comb(-half_beta, &cov.apply(&s)?, -half_beta)
}

/// Integrates the flow from the ensemble's time down to `t_min` with
/// uniform steps, keeping `snapshots` equally spaced states (both endpoints
/// included).
pub fn integrate_flow<R: Real, S: ScoreFn<R> + ?Sized>(
    prior: &ParticleEnsemble<R>,
    score_fn: &S,
    cov: &AnisotropicCovariance<R>,
    config: &FlowConfig,
) -> Result<FlowTrajectory<R>> {
    let FlowConfig { steps, snapshots, integrator, t_min, beta } = *config;
    if snapshots < 2 || steps < snapshots {
        return invalid(format!("need steps >= snapshots >= 2, got {steps} and {snapshots}"));
    }
    let t0 = prior.time().as_f64();
    if !(t_min > 0.0 && t_min < t0) {
        return invalid(format!("t_min {t_min} must lie in (0, {t0})"));
    }
    let dt = (t0 - t_min) / steps as f64;
    let time_at = |k: usize| if k == steps { t_min } else { t0 - k as f64 * dt };
    let marks: Vec<usize> =
        (0..snapshots).map(|j| ((j * steps) as f64 / (snapshots - 1) as f64).round() as usize).collect();

    let mut times = vec![R::of(t0)];
    let mut shots = vec![prior.clone()];
    let mut x = prior.states().clone();
    let h = R::of(-dt);
    for k in 0..steps {
        let (ta, tb) = (R::of(time_at(k)), R::of(time_at(k + 1)));
        let label = |e: SagdError| match e {
            SagdError::NonFinite { what, .. } => SagdError::NonFinite { step: k + 1, what },
            other => other,
        };
        let d1 = pf_ode_drift(&x, ta, score_fn, cov, &beta).map_err(label)?;
        x = match integrator {
            Integrator::Euler => x.lin_comb(R::one(), &d1, h)?,
            Integrator::Heun => {
                let pred = x.lin_comb(R::one(), &d1, h)?;
                let d2 = pf_ode_drift(&pred, tb, score_fn, cov, &beta).map_err(label)?;
                let avg = d1.add(&d2)?.scaled(R::of(0.5));
                x.lin_comb(R::one(), &avg, h)?
            }
        };
        if !x.is_finite() {
            return Err(SagdError::NonFinite { step: k + 1, what: "particle state".into() });
        }
        let max_abs = x.max_abs().as_f64();
        if max_abs > DIVERGENCE_LIMIT {
            return Err(SagdError::Divergence { step: k + 1, max_abs });
        }
        if marks[1..].contains(&(k + 1)) {
            times.push(tb);
            shots.push(ParticleEnsemble { states: x.clone(), time: tb });
        }
    }
    Ok(FlowTrajectory { times, snapshots: shots })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampler {
    #[default]
    Ddim,
    Ddpm,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ddim => "ddim",
            Self::Ddpm => "ddpm",
        })
    }
}

impl FromStr for Sampler {
    type Err = SagdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(Self::Ddim),
            "ddpm" => Ok(Self::Ddpm),
            _ => invalid(format!("unknown sampler {s:?} (expected ddim or ddpm)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReverseConfig {
    pub n: usize,
    /// Channels per sample; only meaningful for Fourier covariances.
    pub channels: usize,
    /// DDIM step stride; DDPM always visits every step.
    pub stride: usize,
    pub seed: u64,
    pub sampler: Sampler,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        Self { n: 1, channels: 1, stride: 1, seed: 0, sampler: Sampler::Ddim }
    }
}

/// Runs the learned reverse process from `x_T ~ N(0, σ_T²Σ_w)`.
///
/// When `Σ_w` is singular each prediction is replaced by its projection
/// onto `range(Σ_w)` (through the pseudoinverse score), so iterates never
/// pick up content in the unsupported directions.
pub fn reverse_sample<R: Real, P: EpsPredictor<R> + ?Sized>(
    predictor: &P,
    sched: &DiffusionSchedule<R>,
    cov: &AnisotropicCovariance<R>,
    config: &ReverseConfig,
) -> Result<TensorField<R>> {
    if config.n == 0 {
        return invalid("sample count must be positive");
    }
    let big_t = sched.steps();
    let mut x = sample_shaped_noise(cov, config.n, config.channels, derive_seed(config.seed, &[0]), NoiseMode::Raw)?
        .scaled(sched.sigma(big_t));
    let project = !cov.is_full_rank(DEFAULT_ZERO_TOL);
    let predict = |x: &TensorField<R>, t: usize| -> Result<TensorField<R>> {
        let eps = predictor.predict_eps(x, t)?;
        x.check_same_shape(&eps)?;
        if !eps.is_finite() {
            return Err(SagdError::NonFinite { step: t, what: "predicted noise".into() });
        }
        if project {
            let s = score_from_eps(&eps, t, sched, cov, DEFAULT_ZERO_TOL)?;
            eps_from_score(&s, t, sched, cov)
        } else {
            Ok(eps)
        }
    };
    match config.sampler {
        Sampler::Ddim => {
            let ts = sched.ddim_timesteps(config.stride)?;
            for pair in ts.windows(2) {
                let eps = predict(&x, pair[0])?;
                x = ddim_step(&x, &eps, pair[0], pair[1], sched)?;
            }
        }
        Sampler::Ddpm => {
            for t in (1..=big_t).rev() {
                let eps = predict(&x, t)?;
                x = ddpm_step(&x, &eps, t, sched, cov, derive_seed(config.seed, &[1, t as u64]))?;
            }
        }
    }
    Ok(x)
}

/// One grid point of a score field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample<R> {
    pub point: [R; 2],
    pub score: [R; 2],
}

/// Scores on a `resolution × resolution` grid spanning `bounds =
/// [(x_lo, x_hi), (y_lo, y_hi)]`, row by row in `y`; a single point sits at
/// the center.
pub fn score_field_grid<R: Real, S: ScoreFn<R> + ?Sized>(
    score_fn: &S,
    bounds: [(R, R); 2],
    resolution: usize,
    t: R,
) -> Result<Vec<FieldSample<R>>> {
    if resolution == 0 {
        return invalid("grid resolution must be positive");
    }
    let axis = |(lo, hi): (R, R)| -> Vec<R> {
        if resolution == 1 {
            vec![(lo + hi) * R::of(0.5)]
        } else {
            (0..resolution).map(|i| lo + (hi - lo) * R::of_usize(i) / R::of_usize(resolution - 1)).collect()
        }
    };
    let (xs, ys) = (axis(bounds[0]), axis(bounds[1]));
    let rows: Vec<Vec<R>> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| vec![x, y])).collect();
    let pts = TensorField::from_rows(&rows)?;
    let s = score_fn.score(&pts, t)?;
    if s.sample_len() != 2 {
        return Err(SagdError::ShapeMismatch("score field needs a 2D score".into()));
    }
    Ok(rows.iter().zip(s.samples()).map(|(p, v)| FieldSample { point: [p[0], p[1]], score: [v[0], v[1]] }).collect())
}
