//! Closed-form Gaussian-mixture targets.
//!
//! A mixture stays a mixture under anisotropic Gaussian smoothing, so its
//! smoothed density, score, posterior mean `E[x₀ | x_t]` and the optimal
//! noise predictor are all available in closed form. These are the oracles
//! the rest of the crate is checked against.

use std::f64::consts::PI;

use rand::Rng;

use crate::diffusion::{DiffusionSchedule, EpsPredictor, NoiseLevel};
use crate::error::{invalid, Result, SagdError};
use crate::linalg::{norm, Cholesky, Matrix};
use crate::rng;
use crate::scalar::{loose_tol, Real};
use crate::spectral::AnisotropicCovariance;
use crate::tensor::TensorField;

#[derive(Clone, Debug)]
pub struct GaussianMixture<R> {
    weights: Vec<R>,
    log_weights: Vec<R>,
    means: Vec<Vec<R>>,
    covariances: Vec<Matrix<R>>,
    factors: Vec<Cholesky<R>>,
}

impl<R: Real> GaussianMixture<R> {
    pub fn new(weights: Vec<R>, means: Vec<Vec<R>>, covariances: Vec<Matrix<R>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return invalid(format!(
                "mixture needs matching nonempty weights/means/covariances, got {k}/{}/{}",
                means.len(),
                covariances.len()
            ));
        }
        if weights.iter().any(|&w| !(w > R::zero())) {
            return invalid("mixture weights must be positive");
        }
        let total: R = weights.iter().copied().sum();
        if (total - R::one()).abs() > loose_tol::<R>(1e-12, 16.0) {
            return invalid(format!("mixture weights sum to {total}, not 1"));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) || covariances.iter().any(|c| c.rows() != d || c.cols() != d) {
            return Err(SagdError::ShapeMismatch("mixture components disagree on dimension".into()));
        }
        let sym_tol = loose_tol::<R>(1e-12, 64.0);
        let mut factors = Vec::with_capacity(k);
        for (i, c) in covariances.iter().enumerate() {
            if !c.is_symmetric(sym_tol) {
                return invalid(format!("component {i} covariance is not symmetric"));
            }
            factors.push(c.cholesky().map_err(|_| {
                SagdError::InvalidArgument(format!("component {i} covariance is not positive definite"))
            })?);
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { weights, log_weights, means, covariances, factors })
    }

    /// A single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: Vec<R>, cov: Matrix<R>) -> Result<Self> {
        Self::new(vec![R::one()], vec![mean], vec![cov])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[R] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<R>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix<R>] {
        &self.covariances
    }

    fn check_point(&self, x: &[R]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(SagdError::ShapeMismatch(format!("point of dim {} for a {}-dim mixture", x.len(), self.dim())));
        }
        Ok(())
    }

    /// Per-component `log π_k + log N(x; μ_k, C_k)` and the whitened
    /// residuals `C_k⁻¹ (x - μ_k)`.
    fn component_terms(&self, x: &[R]) -> (Vec<R>, Vec<Vec<R>>) {
        let half = R::of(0.5);
        let log_2pi = R::of((2.0 * PI).ln()) * R::of_usize(self.dim());
        let mut logs = Vec::with_capacity(self.components());
        let mut solved = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            let diff: Vec<R> = x.iter().zip(&self.means[k]).map(|(&a, &b)| a - b).collect();
            let f = &self.factors[k];
            let white = f.solve_lower(&diff);
            let quad = white.iter().map(|&v| v * v).sum::<R>();
            logs.push(self.log_weights[k] - half * (log_2pi + f.log_det() + quad));
            solved.push(f.solve_upper(&white));
        }
        (logs, solved)
    }

    pub fn log_density(&self, x: &[R]) -> Result<R> {
        self.check_point(x)?;
        let (logs, _) = self.component_terms(x);
        Ok(log_sum_exp(&logs))
    }

    /// Posterior component probabilities `r_k(x)`.
    pub fn responsibilities(&self, x: &[R]) -> Result<Vec<R>> {
        self.check_point(x)?;
        let (logs, _) = self.component_terms(x);
        Ok(softmax(&logs))
    }

    /// `∇ log p(x) = Σ_k r_k(x)·(-C_k⁻¹ (x - μ_k))`.
    pub fn score(&self, x: &[R]) -> Result<Vec<R>> {
        self.check_point(x)?;
        let (logs, solved) = self.component_terms(x);
        let resp = softmax(&logs);
        let mut s = vec![R::zero(); self.dim()];
        for (r, v) in resp.iter().zip(&solved) {
            for (si, &vi) in s.iter_mut().zip(v) {
                *si = *si - *r * vi;
            }
        }
        Ok(s)
    }

    /// Scores for every row of an `(n, d)` field.
    pub fn score_batch(&self, x: &TensorField<R>) -> Result<TensorField<R>> {
        let mut out = TensorField::zeros(x.shape().to_vec());
        for i in 0..x.batch() {
            let s = self.score(x.sample(i))?;
            out.sample_mut(i).copy_from_slice(&s);
        }
        Ok(out)
    }

    /// `n` i.i.d. draws as an `(n, d)` field; draw `i` depends only on
    /// `(seed, i)`.
    pub fn sample(&self, n: usize, seed: u64) -> TensorField<R> {
        let d = self.dim();
        let mut out = TensorField::vectors(n, d);
        let mut z = vec![R::zero(); d];
        for i in 0..n {
            let mut g = rng::stream(seed, i as u64, 0);
            let u: f64 = g.gen();
            let mut acc = 0.0;
            let mut k = self.components() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w.as_f64();
                if u < acc {
                    k = j;
                    break;
                }
            }
            rng::fill_standard_normal(&mut g, &mut z);
            let lz = self.factors[k].mul_lower(&z);
            for ((o, &m), &v) in out.sample_mut(i).iter_mut().zip(&self.means[k]).zip(&lz) {
                *o = m + v;
            }
        }
        out
    }

    /// Law of `√ᾱ·x₀ + σ·ε`, `ε ~ N(0, Σ_w)`: means `√ᾱ μ_k`, covariances
    /// `ᾱ C_k + σ² Σ_w`.
    pub fn smoothed(&self, level: NoiseLevel<R>, cov: &AnisotropicCovariance<R>) -> Result<Self> {
        let sigma_w = dense_covariance(cov, self.dim())?;
        let sab = level.sqrt_alpha_bar();
        let means = self.means.iter().map(|m| m.iter().map(|&v| v * sab).collect()).collect();
        let covs = self
            .covariances
            .iter()
            .map(|c| c.lin_comb(level.alpha_bar, &sigma_w, level.sigma2))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.weights.clone(), means, covs).map_err(|_| {
            SagdError::DegenerateDensity("smoothed covariance is singular; the marginal has no density".into())
        })
    }

    /// Score of [`Self::smoothed`] at `x`.
    pub fn smoothed_score(&self, level: NoiseLevel<R>, cov: &AnisotropicCovariance<R>, x: &[R]) -> Result<Vec<R>> {
        self.smoothed(level, cov)?.score(x)
    }

    /// Precomputes everything needed for posterior means at one noise level.
    pub fn posterior(&self, level: NoiseLevel<R>, cov: &AnisotropicCovariance<R>) -> Result<MixturePosterior<R>> {
        MixturePosterior::new(self, level, cov)
    }

    /// `E[x₀ | x_t]`, cross-checked against the Tweedie form.
    pub fn posterior_mean_x0(&self, xt: &[R], level: NoiseLevel<R>, cov: &AnisotropicCovariance<R>) -> Result<Vec<R>> {
        self.posterior(level, cov)?.checked_mean(xt)
    }

    /// `ε* = E[ε | x_t] = (x_t - √ᾱ E[x₀ | x_t]) / σ`.
    pub fn optimal_eps(&self, xt: &[R], level: NoiseLevel<R>, cov: &AnisotropicCovariance<R>) -> Result<Vec<R>> {
        self.posterior(level, cov)?.optimal_eps(xt)
    }
}

/// `E[x₀ | x_t]` machinery for one mixture at one noise level.
///
/// Component `k` contributes the linear-Gaussian posterior mean
/// `μ_k + √ᾱ C_k S_k⁻¹ (x_t - √ᾱ μ_k)` with `S_k = ᾱ C_k + σ² Σ_w`,
/// weighted by its responsibility under the smoothed mixture.
#[derive(Clone, Debug)]
pub struct MixturePosterior<R> {
    level: NoiseLevel<R>,
    sigma_w: Matrix<R>,
    smoothed: GaussianMixture<R>,
    means: Vec<Vec<R>>,
    gains: Vec<Matrix<R>>,
}

impl<R: Real> MixturePosterior<R> {
    fn new(gm: &GaussianMixture<R>, level: NoiseLevel<R>, cov: &AnisotropicCovariance<R>) -> Result<Self> {
        let smoothed = gm.smoothed(level, cov)?;
        let sab = level.sqrt_alpha_bar();
        let gains = gm
            .covariances
            .iter()
            .zip(&smoothed.factors)
            .map(|(c, s)| c.matmul(&s.inverse()).map(|m| m.scaled(sab)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { level, sigma_w: dense_covariance(cov, gm.dim())?, smoothed, means: gm.means.clone(), gains })
    }

    pub fn level(&self) -> NoiseLevel<R> {
        self.level
    }

    pub fn smoothed(&self) -> &GaussianMixture<R> {
        &self.smoothed
    }

    /// Closed-form posterior mean.
    pub fn mean(&self, xt: &[R]) -> Result<Vec<R>> {
        let resp = self.smoothed.responsibilities(xt)?;
        let sab = self.level.sqrt_alpha_bar();
        let mut out = vec![R::zero(); xt.len()];
        for ((r, m), g) in resp.iter().zip(&self.means).zip(&self.gains) {
            let innov: Vec<R> = xt.iter().zip(m).map(|(&x, &mu)| x - sab * mu).collect();
            let corr = g.matvec(&innov);
            for ((o, &mu), &c) in out.iter_mut().zip(m).zip(&corr) {
                *o = *o + *r * (mu + c);
            }
        }
        Ok(out)
    }

    /// Tweedie form: with `z = x_t/√ᾱ` and `σ̃² = σ²/ᾱ`,
    /// `E[x₀ | z] = z + σ̃² Σ_w ∇_z log p(z)`, and `∇_z = √ᾱ ∇_x`.
    pub fn tweedie_mean(&self, xt: &[R]) -> Result<Vec<R>> {
        let sab = self.level.sqrt_alpha_bar();
        let score_x = self.smoothed.score(xt)?;
        let score_z: Vec<R> = score_x.iter().map(|&s| s * sab).collect();
        let tilde = self.level.sigma2 / self.level.alpha_bar;
        let push = self.sigma_w.matvec(&score_z);
        Ok(xt.iter().zip(&push).map(|(&x, &p)| x / sab + tilde * p).collect())
    }

    /// Closed form, failing if the Tweedie route disagrees beyond 1e-6
    /// (relative to the magnitude of the mean).
    pub fn checked_mean(&self, xt: &[R]) -> Result<Vec<R>> {
        let a = self.mean(xt)?;
        let b = self.tweedie_mean(xt)?;
        let diff = a.iter().zip(&b).map(|(&x, &y)| (x - y) * (x - y)).sum::<R>().sqrt();
        let scale = norm(&a).max(R::one());
        if diff > loose_tol::<R>(1e-6, 1e3) * scale {
            return Err(SagdError::Inconsistent(format!(
                "posterior mean routes disagree by {diff} (closed form vs Tweedie)"
            )));
        }
        Ok(a)
    }

    pub fn optimal_eps(&self, xt: &[R]) -> Result<Vec<R>> {
        let sigma = self.level.sigma();
        if !(sigma > R::zero()) {
            return Err(SagdError::DegenerateNoiseLevel("sigma = 0 leaves the noise undefined".into()));
        }
        let m = self.mean(xt)?;
        let sab = self.level.sqrt_alpha_bar();
        Ok(xt.iter().zip(&m).map(|(&x, &mu)| (x - sab * mu) / sigma).collect())
    }
}

/// The exact `E[ε | x_t]` predictor for mixture data under a discrete schedule.
pub struct MixtureEpsOracle<'a, R: Real> {
    pub mixture: &'a GaussianMixture<R>,
    pub schedule: &'a DiffusionSchedule<R>,
    pub covariance: &'a AnisotropicCovariance<R>,
}

impl<R: Real> EpsPredictor<R> for MixtureEpsOracle<'_, R> {
    fn predict_eps(&self, xt: &TensorField<R>, t: usize) -> Result<TensorField<R>> {
        let post = self.mixture.posterior(NoiseLevel::discrete(self.schedule, t)?, self.covariance)?;
        let mut out = TensorField::zeros(xt.shape().to_vec());
        for i in 0..xt.batch() {
            let e = post.optimal_eps(xt.sample(i))?;
            out.sample_mut(i).copy_from_slice(&e);
        }
        Ok(out)
    }
}

fn dense_covariance<R: Real>(cov: &AnisotropicCovariance<R>, dim: usize) -> Result<Matrix<R>> {
    if cov.dim() != dim {
        return Err(SagdError::ShapeMismatch(format!("covariance dim {} vs mixture dim {dim}", cov.dim())));
    }
    cov.to_dense()
}

pub(crate) fn log_sum_exp<R: Real>(v: &[R]) -> R {
    let m = v.iter().copied().fold(R::neg_infinity(), R::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<R>().ln()
}

fn softmax<R: Real>(v: &[R]) -> Vec<R> {
    let lse = log_sum_exp(v);
    v.iter().map(|&x| (x - lse).exp()).collect()
}

/// Named mixtures used by the experiments.
pub mod presets {
    use super::*;

    /// Three well-separated, mildly correlated modes in the plane.
    pub fn three_mode<R: Real>() -> GaussianMixture<R> {
        let m = |rows: [[f64; 2]; 2]| {
            Matrix::from_rows(&rows.iter().map(|r| r.iter().map(|&v| R::of(v)).collect()).collect::<Vec<_>>())
                .expect("static matrix")
        };
        let v = |a: f64, b: f64| vec![R::of(a), R::of(b)];
        GaussianMixture::new(
            vec![R::of(0.3), R::of(0.3), R::of(0.4)],
            vec![v(-1.5, -1.0), v(1.5, -1.0), v(0.0, 1.5)],
            vec![m([[0.15, 0.05], [0.05, 0.10]]), m([[0.15, -0.05], [-0.05, 0.10]]), m([[0.10, 0.0], [0.0, 0.20]])],
        )
        .expect("static preset is valid")
    }

    /// Balanced pair of isotropic modes at `±separation/2` on the first axis.
    pub fn two_mode<R: Real>(separation: f64, variance: f64, dim: usize) -> Result<GaussianMixture<R>> {
        let mut a = vec![R::zero(); dim];
        let mut b = vec![R::zero(); dim];
        a[0] = R::of(-separation / 2.0);
        b[0] = R::of(separation / 2.0);
        let c = Matrix::identity(dim).scaled(R::of(variance));
        GaussianMixture::new(vec![R::of(0.5), R::of(0.5)], vec![a, b], vec![c.clone(), c])
    }

    /// Two-mode stand-in for a spectral power-law tilt.
    ///
    /// The two eigen-directions play the role of a low (`r = 1/8`) and a high
    /// (`r = 1/2`) frequency mode; eigenvalues are `r^{2α}` rescaled to unit
    /// mean, in a basis rotated by π/6.
    pub fn spectral_tilt_2d<R: Real>(alpha: f64) -> AnisotropicCovariance<R> {
        let lo = 0.125f64.powf(2.0 * alpha);
        let hi = 0.5f64.powf(2.0 * alpha);
        let mean = 0.5 * (lo + hi);
        AnisotropicCovariance::explicit(Matrix::rotation2(R::of(PI / 6.0)), vec![R::of(lo / mean), R::of(hi / mean)])
            .expect("rotation is orthonormal")
    }
}
