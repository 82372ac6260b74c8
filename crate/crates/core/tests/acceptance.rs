//! End-to-end acceptance checks. Each check prints one PASS/FAIL line with
//! its measurements and runtime; the process fails if any check fails.
//!
//! Oracles (closed-form Gaussian algebra, quadrature, grid Bayes, analytic
//! spectra) are written out here rather than taken from the library.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sagd::analytic::presets::{spectral_tilt_2d, three_mode, two_mode};
use sagd::diagnostics::{empirical_fourier_cov, energy_distance, fit_loglog_slope, rapsd};
use sagd::diffusion::{
    ddim_step, ddpm_step, forward_sample, posterior_params, score_from_eps, timevarying_marginal_cov, x0_from_eps,
    ContinuousBeta,
};
use sagd::flow::{integrate_flow, FlowConfig, FlowTrajectory, Integrator, MixtureScore, ParticleEnsemble};
use sagd::nn::{gradient_check, noised_batch, relative_error, train_eps_predictor, DenseNet, NetSpec, TrainConfig};
use sagd::omission::{omission_experiment, procedural_fields, OmissionConfig};
use sagd::rng::{self, derive_seed};
use sagd::spectral::{sample_shaped_noise, Fft2};
use sagd::{
    AnisotropicCovariance, DiffusionSchedule, FrequencyGrid, GaussianMixture, Matrix, NoiseLevel, NoiseMode,
    SpectralWeight, TensorField,
};

type Check = Result<String, String>;
type Named = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 2x2 algebra

type M2 = [[f64; 2]; 2];

fn m2(m: &Matrix) -> M2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn add(a: M2, b: M2, sa: f64, sb: f64) -> M2 {
    [
        [sa * a[0][0] + sb * b[0][0], sa * a[0][1] + sb * b[0][1]],
        [sa * a[1][0] + sb * b[1][0], sa * a[1][1] + sb * b[1][1]],
    ]
}

fn mul(a: M2, b: M2) -> M2 {
    let e = |i: usize, j: usize| a[i][0] * b[0][j] + a[i][1] * b[1][j];
    [[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]]
}

fn mv(a: M2, x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

fn det(a: M2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

fn inv(a: M2) -> M2 {
    let d = det(a);
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm2(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn rel2(a: [f64; 2], reference: [f64; 2]) -> f64 {
    norm2(sub2(a, reference)) / norm2(reference).max(f64::MIN_POSITIVE)
}

fn v2(x: &[f64]) -> [f64; 2] {
    [x[0], x[1]]
}

/// Closed-form 2D mixture algebra, independent of the library.
struct Oracle {
    weights: Vec<f64>,
    means: Vec<[f64; 2]>,
    covs: Vec<M2>,
}

impl Oracle {
    fn of(gm: &GaussianMixture) -> Self {
        Self {
            weights: gm.weights().to_vec(),
            means: gm.means().iter().map(|m| v2(m)).collect(),
            covs: gm.covariances().iter().map(m2).collect(),
        }
    }

    /// Component log-densities `log π_k N(x; m_k, S_k)` of the smoothed
    /// mixture, with `m_k = √ᾱ μ_k`, `S_k = ᾱ C_k + σ² Σ`.
    fn smoothed_parts(&self, x: [f64; 2], ab: f64, s2: f64, sigma: M2) -> Vec<(f64, [f64; 2], M2)> {
        let sab = ab.sqrt();
        self.means
            .iter()
            .zip(&self.covs)
            .zip(&self.weights)
            .map(|((mu, c), &w)| {
                let s = add(*c, sigma, ab, s2);
                let si = inv(s);
                let r = sub2(x, [sab * mu[0], sab * mu[1]]);
                let q = r[0] * mv(si, r)[0] + r[1] * mv(si, r)[1];
                let logp = w.ln() - (2.0 * std::f64::consts::PI).ln() - 0.5 * det(s).ln() - 0.5 * q;
                (logp, r, si)
            })
            .collect()
    }

    fn responsibilities(parts: &[(f64, [f64; 2], M2)]) -> Vec<f64> {
        let top = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = parts.iter().map(|p| (p.0 - top).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    }

    fn smoothed_score(&self, x: [f64; 2], ab: f64, s2: f64, sigma: M2) -> [f64; 2] {
        let parts = self.smoothed_parts(x, ab, s2, sigma);
        let resp = Self::responsibilities(&parts);
        let mut s = [0.0; 2];
        for (r, (_, d, si)) in resp.iter().zip(&parts) {
            let g = mv(*si, *d);
            s[0] -= r * g[0];
            s[1] -= r * g[1];
        }
        s
    }

    fn score(&self, x: [f64; 2]) -> [f64; 2] {
        self.smoothed_score(x, 1.0, 0.0, [[0.0; 2]; 2])
    }

    /// `E[x₀ | x_t]` by per-component Gaussian conditioning.
    fn posterior_mean(&self, x: [f64; 2], ab: f64, s2: f64, sigma: M2) -> [f64; 2] {
        let parts = self.smoothed_parts(x, ab, s2, sigma);
        let resp = Self::responsibilities(&parts);
        let sab = ab.sqrt();
        let mut m = [0.0; 2];
        for ((r, (_, d, si)), (mu, c)) in resp.iter().zip(&parts).zip(self.means.iter().zip(&self.covs)) {
            let gain = mv(mul(*c, *si), *d);
            m[0] += r * (mu[0] + sab * gain[0]);
            m[1] += r * (mu[1] + sab * gain[1]);
        }
        m
    }

    fn optimal_eps(&self, x: [f64; 2], ab: f64, s2: f64, sigma: M2) -> [f64; 2] {
        let m = self.posterior_mean(x, ab, s2, sigma);
        let (sab, s) = (ab.sqrt(), s2.sqrt());
        [(x[0] - sab * m[0]) / s, (x[1] - sab * m[1]) / s]
    }
}

fn uniform(seed: u64, counters: &[u64]) -> f64 {
    (derive_seed(seed, counters) >> 11) as f64 / (1u64 << 53) as f64
}

fn sigma_dense(cov: &AnisotropicCovariance) -> M2 {
    m2(&cov.to_dense().unwrap())
}

fn anisotropic_2d() -> Vec<(&'static str, AnisotropicCovariance)> {
    let skew = AnisotropicCovariance::explicit(Matrix::rotation2(0.7), vec![2.5, 0.3]).unwrap();
    vec![("tilt+", spectral_tilt_2d(0.5)), ("tilt-", spectral_tilt_2d(-0.5)), ("skew", skew)]
}

/// Signed DFT frequency of index `k` on `n` points, in cycles per sample.
fn fft_freq(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if k < n_f / 2.0 {
        k / n_f
    } else {
        (k - n_f) / n_f
    }
}

// ------------------------------------------------------------------ checks

const SIZE: usize = 16;

fn shaped_samples(alpha: f64, n: usize, seed: u64) -> TensorField {
    let grid = FrequencyGrid::new(SIZE, SIZE).unwrap();
    let cov = AnisotropicCovariance::from_weight(&SpectralWeight::power_law(grid, alpha, 1e-10).unwrap());
    sample_shaped_noise(&cov, n, 1, seed, NoiseMode::Raw).unwrap()
}

fn covariance_structure() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, alpha) in [-0.5, 0.0, 0.5].into_iter().enumerate() {
        let x = shaped_samples(alpha, 20_000, 11 + i as u64);
        let emp = empirical_fourier_cov(&x, 4000, 5).unwrap();
        let power: Vec<f64> = (0..SIZE * SIZE)
            .map(|b| {
                let r = fft_freq(b / SIZE, SIZE).hypot(fft_freq(b % SIZE, SIZE));
                (r + 1e-10).powf(2.0 * alpha)
            })
            .collect();
        let mut sorted = power.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let worst = power
            .iter()
            .zip(&emp.variance)
            .filter(|(p, _)| **p > median || alpha == 0.0)
            .map(|(p, v)| (v / p - 1.0).abs())
            .fold(0.0, f64::max);
        ok &= worst < 0.05 && emp.max_correlation < 0.05;
        lines.push(format!("α={alpha:+.1}: var err {worst:.4}, max corr {:.4}", emp.max_correlation));
    }
    ensure(ok, lines.join("; "))
}

fn rapsd_slope() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, alpha) in [-0.5, 0.0, 0.5].into_iter().enumerate() {
        let x = shaped_samples(alpha, 20_000, 31 + i as u64);
        let slope = fit_loglog_slope(&rapsd(&x, 16).unwrap(), 0.1, 0.8).unwrap().slope;
        let pass = if alpha == 0.0 { slope.abs() < 0.05 } else { (slope - 2.0 * alpha).abs() <= 0.1 };
        ok &= pass;
        lines.push(format!("α={alpha:+.1}: slope {slope:+.4}"));
    }
    ensure(ok, lines.join("; "))
}

fn mixtures() -> Vec<(&'static str, GaussianMixture)> {
    vec![("three-mode", three_mode()), ("two-mode", two_mode(2.0, 0.25, 2).unwrap())]
}

fn score_eps_identity() -> Check {
    let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (gi, (_, gm)) in mixtures().iter().enumerate() {
        let oracle = Oracle::of(gm);
        for (ci, (_, cov)) in anisotropic_2d().iter().enumerate() {
            let sigma = sigma_dense(cov);
            for i in 0..100u64 {
                let seed = 100 * gi as u64 + ci as u64;
                let t = 1 + (derive_seed(seed, &[i, 0]) % 1000) as usize;
                let x = [-3.0 + 6.0 * uniform(seed, &[i, 1]), -3.0 + 6.0 * uniform(seed, &[i, 2])];
                let ab = sched.alpha_bar(t);
                let eps = oracle.optimal_eps(x, ab, 1.0 - ab, sigma);
                let s =
                    score_from_eps(&TensorField::from_rows(&[eps.to_vec()]).unwrap(), t, &sched, cov, 1e-12).unwrap();
                let truth = oracle.smoothed_score(x, ab, 1.0 - ab, sigma);
                worst = worst.max(rel2(v2(s.data()), truth));
                count += 1;
            }
        }
    }
    ensure(worst < 1e-6, format!("{count} points, max relative error {worst:.2e}"))
}

fn tweedie_identity() -> Check {
    let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut worst: f64 = 0.0;
    for (gi, (_, gm)) in mixtures().iter().enumerate() {
        let oracle = Oracle::of(gm);
        for (ci, (_, cov)) in anisotropic_2d().iter().enumerate() {
            let sigma = sigma_dense(cov);
            for i in 0..100u64 {
                let seed = 7 + 100 * gi as u64 + ci as u64;
                let t = 1 + (derive_seed(seed, &[i, 0]) % 1000) as usize;
                let z = [-3.0 + 6.0 * uniform(seed, &[i, 1]), -3.0 + 6.0 * uniform(seed, &[i, 2])];
                let level = NoiseLevel::discrete(&sched, t).unwrap();
                let closed = oracle.posterior_mean(z, level.alpha_bar, level.sigma2, sigma);
                let s = gm.smoothed_score(level, cov, &z).unwrap();
                let ss = mv(sigma, v2(&s));
                let sab = level.alpha_bar.sqrt();
                let tweedie = [(z[0] + level.sigma2 * ss[0]) / sab, (z[1] + level.sigma2 * ss[1]) / sab];
                let lib = gm.posterior_mean_x0(&z, level, cov).unwrap();
                worst = worst.max(rel2(tweedie, closed)).max(rel2(v2(&lib), closed));
            }
        }
    }

    let gm1 = two_mode(2.0, 0.25, 1).unwrap();
    let mut quad_worst: f64 = 0.0;
    for lambda in [0.3, 1.0, 2.0] {
        let cov = AnisotropicCovariance::diagonal(vec![lambda]).unwrap();
        for t in [20, 150, 400, 800] {
            let level = NoiseLevel::discrete(&sched, t).unwrap();
            for j in 0..11 {
                let xt = -2.5 + 0.5 * j as f64;
                let (lo, hi, m) = (-10.0, 10.0, 40_001);
                let h = (hi - lo) / (m - 1) as f64;
                let (mut num, mut den) = (0.0, 0.0);
                for k in 0..m {
                    let x0: f64 = lo + h * k as f64;
                    let prior: f64 =
                        [-1.0f64, 1.0].iter().map(|mu| 0.5 * (-(x0 - mu).powi(2) / (2.0 * 0.25)).exp()).sum();
                    let r = xt - level.alpha_bar.sqrt() * x0;
                    let p = prior * (-r * r / (2.0 * level.sigma2 * lambda)).exp();
                    let wgt = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
                    num += wgt * p * x0;
                    den += wgt * p;
                }
                let lib = gm1.posterior_mean_x0(&[xt], level, &cov).unwrap()[0];
                quad_worst = quad_worst.max((lib - num / den).abs());
            }
        }
    }
    ensure(
        worst < 1e-8 && quad_worst < 1e-4,
        format!("2D closed form vs Tweedie {worst:.2e}; 1D quadrature {quad_worst:.2e}"),
    )
}

fn small_noise_convergence() -> Check {
    let gm = three_mode();
    let oracle = Oracle::of(&gm);
    let grid: Vec<[f64; 2]> = (0..21)
        .flat_map(|i| (0..21).map(move |j| [-2.5 + 0.25 * j as f64, -2.5 + 0.25 * i as f64]))
        .filter(|x| gm.log_density(x).unwrap() >= -6.0)
        .collect();
    let mut covs = vec![("iso", AnisotropicCovariance::identity(2))];
    covs.extend(anisotropic_2d().into_iter().take(2));
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, cov) in &covs {
        let errs: Vec<f64> = [0.3, 0.1, 0.03, 0.01]
            .iter()
            .map(|&sigma| {
                let level = NoiseLevel::from_sigma(sigma).unwrap();
                grid.iter()
                    .map(|x| {
                        let s0 = oracle.score(*x);
                        let st = v2(&gm.smoothed_score(level, cov, x).unwrap());
                        norm2(sub2(st, s0)) / norm2(s0).max(1.0)
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let monotone = errs.windows(2).all(|w| w[1] < w[0]);
        ok &= monotone && errs[3] < 1e-2;
        lines.push(format!("{name}: {}", errs.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>().join(" > ")));
    }
    ensure(ok, format!("{} support nodes; {}", grid.len(), lines.join("; ")))
}

fn flow_endpoints() -> Check {
    let gm = three_mode();
    let beta = ContinuousBeta::default();
    let n = 4096;
    let config = FlowConfig { steps: 500, snapshots: 5, integrator: Integrator::Heun, ..FlowConfig::default() };
    let covs = [
        ("iso", AnisotropicCovariance::identity(2)),
        ("tilt+", spectral_tilt_2d(1.0)),
        ("tilt-", spectral_tilt_2d(-1.0)),
    ];
    let runs: Vec<FlowTrajectory<f64>> = covs
        .iter()
        .map(|(_, cov)| {
            let prior = ParticleEnsemble::mixture_marginal(&gm, cov, &beta, 1.0, n, 17).unwrap();
            integrate_flow(&prior, &MixtureScore { mixture: &gm, covariance: cov, beta }, cov, &config).unwrap()
        })
        .collect();
    let target = gm.sample(n, 99);
    let terminal: Vec<f64> = runs.iter().map(|r| energy_distance(r.terminal().states(), &target).unwrap()).collect();
    let mut pair_end = Vec::new();
    let mut pair_mid = Vec::new();
    for i in 0..3 {
        for j in i + 1..3 {
            pair_end.push(energy_distance(runs[i].terminal().states(), runs[j].terminal().states()).unwrap());
            pair_mid.push(energy_distance(runs[i].nearest(0.5).states(), runs[j].nearest(0.5).states()).unwrap());
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join("/");
    let ok =
        terminal.iter().all(|&e| e < 0.03) && pair_end.iter().all(|&e| e < 0.03) && pair_mid.iter().all(|&e| e > 0.03);
    ensure(
        ok,
        format!(
            "terminal vs target {} ; terminal pairs {} ; midpoint pairs {} (t={:.4})",
            fmt(&terminal),
            fmt(&pair_end),
            fmt(&pair_mid),
            runs[0].nearest(0.5).time()
        ),
    )
}

fn ddpm_posterior() -> Check {
    let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let cov = AnisotropicCovariance::explicit(Matrix::rotation2(0.4), vec![1.8, 0.35]).unwrap();
    let sigma = sigma_dense(&cov);
    let n = 20_000;
    let t = 600;
    let rows: Vec<Vec<f64>> =
        (0..n as u64).map(|i| vec![uniform(3, &[i, 0]) - 0.5, 2.0 * uniform(3, &[i, 1])]).collect();
    let xt = TensorField::from_rows(&rows).unwrap();
    let eps = xt.map(|v| 0.3 * v.sin());
    let out = ddpm_step(&xt, &eps, t, &sched, &cov, 42).unwrap();
    let (mu, bt) = posterior_params(&xt, &x0_from_eps(&xt, &eps, t, &sched).unwrap(), t, &sched).unwrap();
    let resid = out.sub(&mu).unwrap();
    let mut c = [[0.0; 2]; 2];
    let mut mean = [0.0; 2];
    for r in resid.samples() {
        mean[0] += r[0] / n as f64;
        mean[1] += r[1] / n as f64;
    }
    for r in resid.samples() {
        let d = sub2(v2(r), mean);
        for a in 0..2 {
            for b in 0..2 {
                c[a][b] += d[a] * d[b] / (n - 1) as f64;
            }
        }
    }
    let expected = add(sigma, sigma, bt, 0.0);
    let scale = bt * 1.8;
    let cov_err = (0..4).map(|k| (c[k / 2][k % 2] - expected[k / 2][k % 2]).abs()).fold(0.0, f64::max) / scale;

    let lambda = 0.7;
    let cov1 = AnisotropicCovariance::diagonal(vec![lambda]).unwrap();
    let mut bayes_err: f64 = 0.0;
    for t in [2usize, 40, 300, 999] {
        let (x0, xt) = (0.8, -0.3);
        let (a, ab_prev) = (sched.alpha(t), sched.alpha_bar(t - 1));
        let (lo, hi, m) = (-4.0, 4.0, 400_001);
        let h = (hi - lo) / (m - 1) as f64;
        let (mut z, mut m1, mut m2_) = (0.0, 0.0, 0.0);
        for k in 0..m {
            let y: f64 = lo + h * k as f64;
            let like = xt - a.sqrt() * y;
            let prior = y - ab_prev.sqrt() * x0;
            let logp = -like * like / (2.0 * (1.0 - a) * lambda) - prior * prior / (2.0 * (1.0 - ab_prev) * lambda);
            let p = logp.exp();
            z += p;
            m1 += p * y;
            m2_ += p * y * y;
        }
        let mean = m1 / z;
        let var = m2_ / z - mean * mean;
        let x = TensorField::from_rows(&[vec![xt]]).unwrap();
        let x0f = TensorField::from_rows(&[vec![x0]]).unwrap();
        let (mu, bt) = posterior_params(&x, &x0f, t, &sched).unwrap();
        let lib_var = bt * cov1.eigenvalues()[0];
        bayes_err = bayes_err.max((mu.data()[0] - mean).abs()).max((lib_var - var).abs() / var);
    }
    ensure(
        cov_err < 0.05 && bayes_err < 1e-3,
        format!("residual covariance err {cov_err:.4} of top eigenvalue; grid Bayes err {bayes_err:.2e}"),
    )
}

fn ddim_reconstruction() -> Check {
    let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let grid = FrequencyGrid::new(SIZE, SIZE).unwrap();
    let cov = AnisotropicCovariance::from_weight(&SpectralWeight::power_law(grid, 0.5, 1e-10).unwrap());
    let x0 = procedural_fields(32, SIZE, 4).unwrap();
    let mut worst: f64 = 0.0;
    for (start, stride) in [(1000, 1), (1000, 10), (523, 7), (37, 1)] {
        let (xt, eps) = forward_sample(&x0, start, &sched, &cov, 8).unwrap();
        let mut x = xt;
        let mut steps: Vec<usize> = (1..=start).rev().step_by(stride).collect();
        steps.push(0);
        for w in steps.windows(2) {
            x = ddim_step(&x, &eps, w[0], w[1], &sched).unwrap();
        }
        worst = worst.max(x.sub(&x0).unwrap().norm() / x0.norm());
    }
    ensure(worst < 1e-5, format!("max relative reconstruction error {worst:.2e}"))
}

fn toy_training() -> Check {
    let c: M2 = [[1.0, 0.3], [0.3, 0.5]];
    let data =
        GaussianMixture::gaussian(vec![0.0, 0.0], Matrix::from_rows(&[c[0].to_vec(), c[1].to_vec()]).unwrap()).unwrap();
    let cov = spectral_tilt_2d(1.0);
    let sigma = sigma_dense(&cov);
    let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let config = TrainConfig { lr: 1e-2, final_lr_fraction: 0.01, seed: 1, ..TrainConfig::default() };
    let source = |n: usize, s: u64| Ok(data.sample(n, s));
    let (net, _) = train_eps_predictor(&source, &sched, &cov, &config).unwrap();

    let x0 = data.sample(4000, 77);
    let (xt, ts, _) = noised_batch(&x0, &sched, &cov, 78).unwrap();
    let pred = net.predict(&xt, &ts).unwrap();
    let oracle_rows: Vec<Vec<f64>> = xt
        .samples()
        .zip(&ts)
        .map(|(x, &t)| {
            let ab = sched.alpha_bar(t);
            let s2 = 1.0 - ab;
            let s = add(c, sigma, ab, s2);
            let e = mv(mul(sigma, inv(s)), v2(x));
            vec![s2.sqrt() * e[0], s2.sqrt() * e[1]]
        })
        .collect();
    let err = relative_error(&pred, &TensorField::from_rows(&oracle_rows).unwrap()).unwrap();

    let probe = xt.select(&(0..16).collect::<Vec<_>>());
    let target = TensorField::from_rows(&oracle_rows[..16]).unwrap();
    let fresh =
        DenseNet::new(NetSpec { dim: 2, embed: 16, hidden: 32, activation: Default::default(), skip: true }, &sched, 5)
            .unwrap();
    let mut g = rng::seeded(6);
    let mut perturbed = fresh.clone();
    let params: Vec<f64> = fresh.params().iter().map(|p| p + 0.1 * rng::standard_normal::<f64, _>(&mut g)).collect();
    perturbed.set_params(&params).unwrap();
    let grad = [&net, &perturbed]
        .iter()
        .map(|m| gradient_check(m, &probe, &ts[..16], &target, 1e-5, 400, 9).unwrap())
        .fold(0.0, f64::max);
    ensure(err < 0.05 && grad < 1e-4, format!("relative error to oracle {err:.4}; gradient check {grad:.2e}"))
}

fn selective_omission() -> Check {
    let sched = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let source = |n: usize, s: u64| procedural_fields(n, SIZE, s);
    let config = OmissionConfig::default();
    let (r, _, _) = omission_experiment(&source, &sched, &config).unwrap();
    let ok = r.sagd_band_energy <= 1.1 * r.clean_band_energy
        && r.baseline_band_energy > 1.5 * r.clean_band_energy
        && r.sagd_null_score <= 1e-10;
    ensure(
        ok,
        format!(
            "band energy clean {:.3}, corrupted {:.3}, baseline {:.3}, SAGD {:.3}; null-band score {:.1e}, samples {:.1e}",
            r.clean_band_energy,
            r.corrupted_band_energy,
            r.baseline_band_energy,
            r.sagd_band_energy,
            r.sagd_null_score,
            r.sagd_null_sample
        ),
    )
}

fn time_varying_covariance() -> Check {
    let size = 8;
    let grid = FrequencyGrid::new(size, size).unwrap();
    let w1 = SpectralWeight::power_law(grid.clone(), 0.5, 1e-10).unwrap();
    let w2 = SpectralWeight::power_law(grid.clone(), -0.5, 0.05).unwrap();
    let sched = DiffusionSchedule::from_betas(vec![0.3, 0.5]).unwrap();
    let lib = timevarying_marginal_cov(&sched, &[w1.clone(), w2.clone()]).unwrap();
    let (b1, b2) = (0.3, 0.5);
    let analytic: Vec<f64> = w1.power().iter().zip(w2.power()).map(|(p1, p2)| b1 * (1.0 - b2) * p1 + b2 * p2).collect();
    let lib_err = lib.iter().zip(&analytic).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);

    let n = 20_000;
    let c1 = AnisotropicCovariance::from_weight(&w1);
    let c2 = AnisotropicCovariance::from_weight(&w2);
    let e1 = sample_shaped_noise(&c1, n, 1, 1, NoiseMode::Raw).unwrap();
    let e2 = sample_shaped_noise(&c2, n, 1, 2, NoiseMode::Raw).unwrap();
    let x0 = TensorField::images(n, 1, size, size);
    let x1 = x0.lin_comb((1.0 - b1).sqrt(), &e1, b1.sqrt()).unwrap();
    let x2 = x1.lin_comb((1.0 - b2).sqrt(), &e2, b2.sqrt()).unwrap();
    let fft = Fft2::<f64>::new(size, size);
    let mut var = vec![0.0; size * size];
    for plane in x2.planes().unwrap() {
        for (v, c) in var.iter_mut().zip(fft.unitary_coefficients(plane)) {
            *v += c.norm_sqr() / n as f64;
        }
    }
    let mc_err = var.iter().zip(&analytic).map(|(v, a)| (v / a - 1.0).abs()).fold(0.0, f64::max);

    let hand = DiffusionSchedule::from_betas(vec![0.5, 0.5]).unwrap();
    let one = SpectralWeight::from_values(FrequencyGrid::new(1, 1).unwrap(), vec![1.0]).unwrap();
    let two = SpectralWeight::from_values(FrequencyGrid::new(1, 1).unwrap(), vec![2.0]).unwrap();
    let hand_v = timevarying_marginal_cov(&hand, &[one, two]).unwrap()[0];
    ensure(
        mc_err < 0.05 && lib_err < 1e-12 && (hand_v - 2.25).abs() < 1e-12,
        format!("Monte Carlo err {mc_err:.4}; closed form err {lib_err:.1e}; hand case {hand_v}"),
    )
}

fn main() -> ExitCode {
    let checks: [Named; 11] = [
        ("covariance structure", covariance_structure),
        ("radial spectrum slope", rapsd_slope),
        ("score from noise prediction", score_eps_identity),
        ("anisotropic Tweedie", tweedie_identity),
        ("small-noise score limit", small_noise_convergence),
        ("flow endpoints and paths", flow_endpoints),
        ("ancestral step posterior", ddpm_posterior),
        ("DDIM oracle reconstruction", ddim_reconstruction),
        ("toy denoiser training", toy_training),
        ("selective omission", selective_omission),
        ("time-varying covariance", time_varying_covariance),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _) in &checks {
            println!("{}: test", name.replace(' ', "_"));
        }
        return ExitCode::SUCCESS;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    let mut total = Duration::ZERO;
    for (name, check) in checks {
        let key = name.replace(' ', "_");
        if !filters.is_empty() && !filters.iter().any(|f| key.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        total += elapsed;
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name:<28} {detail} [{:.1}s]", elapsed.as_secs_f64());
    }
    println!("acceptance: {failures} failed, total {:.1}s", total.as_secs_f64());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
