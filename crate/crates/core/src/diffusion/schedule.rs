use crate::error::{invalid, Result, SagdError};
use crate::scalar::Real;

/// Discrete variance schedule, indexed by step `t ∈ 1..=T`.
///
/// `t = 0` is accepted by the accessors and denotes clean data
/// (`ᾱ_0 = 1`, `σ_0 = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule<R> {
    beta: Vec<R>,
    alpha: Vec<R>,
    alpha_bar: Vec<R>,
    sigma: Vec<R>,
    beta_tilde: Vec<R>,
}

impl<R: Real> DiffusionSchedule<R> {
    /// `T` betas spaced linearly from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return invalid("schedule needs at least one step");
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return invalid(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Schedule from explicit per-step variances, each in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return invalid("schedule needs at least one step");
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return invalid(format!("every beta must lie in (0, 1), got {b}"));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let sigma: Vec<f64> = alpha_bar.iter().map(|&ab| (1.0 - ab).sqrt()).collect();
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) || sigma.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SagdError::InvalidArgument("schedule is not strictly monotone".into()));
        }
        let beta_tilde = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * betas[i]
            })
            .collect::<Vec<_>>();
        let conv = |v: Vec<f64>| v.into_iter().map(R::of).collect::<Vec<R>>();
        Ok(Self {
            alpha: conv(betas.iter().map(|b| 1.0 - b).collect()),
            beta: conv(betas),
            alpha_bar: conv(alpha_bar),
            sigma: conv(sigma),
            beta_tilde: conv(beta_tilde),
        })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return invalid(format!("step {t} outside 1..={}", self.steps()));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> R {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> R {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> R {
        if t == 0 {
            R::one()
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// `σ_t = √(1 - ᾱ_t)`.
    pub fn sigma(&self, t: usize) -> R {
        if t == 0 {
            R::zero()
        } else {
            self.sigma[t - 1]
        }
    }

    /// `β̃_t = (1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t`; zero at `t = 1`.
    pub fn beta_tilde(&self, t: usize) -> R {
        self.beta_tilde[t - 1]
    }

    /// Descending DDIM timesteps `T, T-stride, …` down to the last value
    /// `≥ 1`, followed by `0`.
    pub fn ddim_timesteps(&self, stride: usize) -> Result<Vec<usize>> {
        if stride == 0 {
            return invalid("DDIM stride must be positive");
        }
        let mut ts: Vec<usize> = (1..=self.steps()).rev().step_by(stride).collect();
        ts.push(0);
        Ok(ts)
    }
}

/// Continuous-time linear `β(t) = β_min + (β_max - β_min)·t` on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousBeta {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ContinuousBeta {
    fn default() -> Self {
        Self { beta_min: 0.1, beta_max: 20.0 }
    }
}

impl ContinuousBeta {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max.is_finite()) {
            return invalid(format!("need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}"));
        }
        Ok(Self { beta_min, beta_max })
    }

    pub fn beta<R: Real>(&self, t: R) -> R {
        R::of(self.beta_min) + R::of(self.beta_max - self.beta_min) * t
    }

    /// `exp(-∫₀ᵗ β)`.
    pub fn alpha_bar<R: Real>(&self, t: R) -> R {
        let t = t.as_f64();
        R::of((-(self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t)).exp())
    }
}

/// Signal and noise coefficients of a Gaussian marginal
/// `x = √ᾱ·x₀ + σ·ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevel<R> {
    pub alpha_bar: R,
    pub sigma2: R,
}

impl<R: Real> NoiseLevel<R> {
    pub fn new(alpha_bar: R, sigma2: R) -> Result<Self> {
        if !(alpha_bar > R::zero() && alpha_bar <= R::one()) || !(sigma2 >= R::zero()) {
            return invalid(format!("invalid noise level (alpha_bar {alpha_bar}, sigma^2 {sigma2})"));
        }
        Ok(Self { alpha_bar, sigma2 })
    }

    pub fn discrete(sched: &DiffusionSchedule<R>, t: usize) -> Result<Self> {
        if t > sched.steps() {
            return invalid(format!("step {t} outside 0..={}", sched.steps()));
        }
        let s = sched.sigma(t);
        Self::new(sched.alpha_bar(t), s * s)
    }

    pub fn continuous(beta: &ContinuousBeta, t: R) -> Result<Self> {
        let ab = beta.alpha_bar(t);
        Self::new(ab, R::one() - ab)
    }

    /// Variance-preserving level with the given noise scale: `ᾱ = 1 - σ²`.
    pub fn from_sigma(sigma: R) -> Result<Self> {
        Self::new(R::one() - sigma * sigma, sigma * sigma)
    }

    pub fn sigma(&self) -> R {
        self.sigma2.sqrt()
    }

    pub fn sqrt_alpha_bar(&self) -> R {
        self.alpha_bar.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_step() {
        let s = DiffusionSchedule::<f64>::from_betas(vec![0.5]).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_relative_eq!(s.sigma(1), 0.5f64.sqrt());
        assert_eq!(s.beta_tilde(1), 0.0);
        assert_eq!(DiffusionSchedule::<f64>::linear(1, 0.5, 0.5).unwrap(), s);
    }

    #[test]
    fn standard_linear_schedule_ends_near_pure_noise() {
        let s = DiffusionSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        let direct: f64 = (0..1000).map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).product();
        assert_relative_eq!(s.alpha_bar(1000), direct, max_relative = 1e-12);
        assert!((3e-5..5e-5).contains(&s.alpha_bar(1000)), "{}", s.alpha_bar(1000));
        assert_eq!(s.beta_tilde(1), 0.0);
        for t in 1..=1000 {
            assert_relative_eq!(s.sigma(t).powi(2), 1.0 - s.alpha_bar(t), max_relative = 1e-12);
        }
    }

    #[test]
    fn monotone() {
        let s = DiffusionSchedule::<f64>::linear(50, 1e-3, 0.2).unwrap();
        for t in 1..50 {
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
            assert!(s.sigma(t + 1) > s.sigma(t));
        }
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(DiffusionSchedule::<f64>::linear(0, 0.1, 0.2).is_err());
        assert!(DiffusionSchedule::<f64>::linear(10, 0.0, 0.2).is_err());
        assert!(DiffusionSchedule::<f64>::linear(10, 0.3, 0.2).is_err());
        assert!(DiffusionSchedule::<f64>::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn ddim_grid() {
        let s = DiffusionSchedule::<f64>::linear(10, 1e-3, 0.2).unwrap();
        assert_eq!(s.ddim_timesteps(3).unwrap(), vec![10, 7, 4, 1, 0]);
        assert_eq!(s.ddim_timesteps(1).unwrap().len(), 11);
        assert!(s.ddim_timesteps(0).is_err());
    }

    #[test]
    fn continuous_beta_integral() {
        let b = ContinuousBeta::default();
        let t = 0.37f64;
        // trapezoid on a fine grid
        let n = 100_000;
        let h = t / n as f64;
        let integral: f64 = (0..n).map(|i| 0.5 * h * (b.beta(i as f64 * h) + b.beta((i + 1) as f64 * h))).sum();
        assert_relative_eq!(b.alpha_bar(t), (-integral).exp(), max_relative = 1e-9);
    }
}
