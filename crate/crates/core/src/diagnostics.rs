//! Spectral and distributional measurements.
//!
//! Everything here reduces in `f64` and in a fixed order, so results do not
//! depend on how a batch was produced.

use rand::seq::index::sample as sample_indices;
use rustfft::num_complex::Complex;

use crate::error::{invalid, Result, SagdError};
use crate::rng;
use crate::scalar::Real;
use crate::spectral::{Band, Fft2, FrequencyGrid};
use crate::tensor::TensorField;

/// Radially averaged power spectrum.
///
/// `power[i]` is the mean squared unitary Fourier coefficient over the bins
/// whose normalized radius falls in shell `i`; white unit-variance noise
/// gives power 1 everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialSpectrum {
    pub centers: Vec<f64>,
    pub power: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Least-squares line through `(ln d, ln power)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Shells that entered the fit.
    pub used: usize,
    /// Shells inside the range skipped for nonpositive power.
    pub skipped: usize,
}

/// Per-bin Fourier variances and the largest sampled cross-bin correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierCovariance {
    pub variance: Vec<f64>,
    pub max_correlation: f64,
    pub pairs: usize,
}

fn image_dims<R: Real>(fields: &TensorField<R>) -> Result<(usize, usize, usize)> {
    let dims = fields.image_dims().ok_or_else(|| {
        SagdError::ShapeMismatch(format!("expected (batch, channels, H, W), got {:?}", fields.shape()))
    })?;
    if fields.batch() == 0 {
        return invalid("empty batch");
    }
    Ok(dims)
}

/// Unitary spectra of every plane, as `f64`.
fn plane_spectra<'a, R: Real>(fields: &'a TensorField<R>) -> Result<impl Iterator<Item = Vec<Complex<f64>>> + 'a> {
    let (_, h, w) = image_dims(fields)?;
    let fft = Fft2::<f64>::new(h, w);
    Ok(fields.planes()?.map(move |p| {
        let plane: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
        fft.unitary_coefficients(&plane)
    }))
}

pub fn rapsd<R: Real>(fields: &TensorField<R>, bins: usize) -> Result<RadialSpectrum> {
    if bins < 4 {
        return invalid(format!("need at least 4 radial bins, got {bins}"));
    }
    let (_, h, w) = image_dims(fields)?;
    let grid = FrequencyGrid::<f64>::new(h, w)?;
    let shell: Vec<Option<usize>> =
        grid.norm_radius().iter().map(|&d| (d > 0.0).then(|| ((d * bins as f64) as usize).min(bins - 1))).collect();
    let mut power = vec![0.0; bins];
    let mut planes = 0usize;
    for coeffs in plane_spectra(fields)? {
        planes += 1;
        for (c, s) in coeffs.iter().zip(&shell) {
            if let Some(s) = s {
                power[*s] += c.norm_sqr();
            }
        }
    }
    let mut counts = vec![0usize; bins];
    let mut dsum = vec![0.0; bins];
    for (&d, s) in grid.norm_radius().iter().zip(&shell) {
        if let Some(s) = s {
            counts[*s] += 1;
            dsum[*s] += d;
        }
    }
    let mut out = RadialSpectrum { centers: vec![], power: vec![], counts: vec![] };
    for i in 0..bins {
        if counts[i] > 0 {
            out.centers.push(dsum[i] / counts[i] as f64);
            out.power.push(power[i] / (counts[i] * planes) as f64);
            out.counts.push(counts[i]);
        }
    }
    Ok(out)
}

pub fn fit_loglog_slope(spec: &RadialSpectrum, d_lo: f64, d_hi: f64) -> Result<LogLogFit> {
    let mut pts = Vec::new();
    let mut skipped = 0;
    for (&d, &p) in spec.centers.iter().zip(&spec.power) {
        if d < d_lo || d > d_hi {
            continue;
        }
        if p > 0.0 && d > 0.0 {
            pts.push((d.ln(), p.ln()));
        } else {
            skipped += 1;
        }
    }
    if pts.len() < 2 || pts.len() + skipped < 3 {
        return invalid(format!("only {} usable shells in [{d_lo}, {d_hi}]", pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return invalid("all shells share one radius");
    }
    let slope = sxy / sxx;
    Ok(LogLogFit { slope, intercept: my - slope * mx, used: pts.len(), skipped })
}

/// Per-sample Fourier energy in `band`, summed over channels: the mean over
/// the batch of `Σ_{a ≤ d ≤ b} |F x|² / (H·W)`.
///
/// Over the full band this is the mean squared norm of a sample.
pub fn band_energy<R: Real>(fields: &TensorField<R>, band: Band) -> Result<f64> {
    Ok(band_energy_per_sample(fields, band)?.iter().sum::<f64>() / fields.batch() as f64)
}

pub fn band_energy_per_sample<R: Real>(fields: &TensorField<R>, band: Band) -> Result<Vec<f64>> {
    let band = Band::new(band.lo, band.hi)?;
    let (c, h, w) = image_dims(fields)?;
    let grid = FrequencyGrid::<f64>::new(h, w)?;
    let mask: Vec<bool> = grid.norm_radius().iter().map(|&d| band.contains(d)).collect();
    let mut out = vec![0.0; fields.batch()];
    for (k, coeffs) in plane_spectra(fields)?.enumerate() {
        out[k / c] += coeffs.iter().zip(&mask).filter(|(_, &m)| m).map(|(z, _)| z.norm_sqr()).sum::<f64>();
    }
    Ok(out)
}

/// RMS difference of log power between two spectra over the shells whose
/// centers lie outside `exclude`.
pub fn log_spectral_distance(a: &RadialSpectrum, b: &RadialSpectrum, exclude: Option<Band>) -> Result<f64> {
    if a.centers.len() != b.centers.len() {
        return Err(SagdError::ShapeMismatch("spectra have different shells".into()));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..a.centers.len() {
        if exclude.is_some_and(|band| band.contains(a.centers[i])) {
            continue;
        }
        if a.power[i] <= 0.0 || b.power[i] <= 0.0 {
            continue;
        }
        let d = a.power[i].ln() - b.power[i].ln();
        acc += d * d;
        n += 1;
    }
    if n == 0 {
        return invalid("no shells left to compare");
    }
    Ok((acc / n as f64).sqrt())
}

/// Empirical covariance of unitary Fourier coefficients, one observation per
/// plane.
///
/// Correlations are `|E[(c_i - m_i) conj(c_j - m_j)]| / √(v_i v_j)` over up
/// to `max_pairs` distinct bin pairs drawn with `seed`; bins with zero
/// variance are left out of the pair pool.
pub fn empirical_fourier_cov<R: Real>(
    fields: &TensorField<R>,
    max_pairs: usize,
    seed: u64,
) -> Result<FourierCovariance> {
    let (c, h, w) = image_dims(fields)?;
    let n = fields.batch() * c;
    if n < 100 {
        return invalid(format!("need at least 100 planes, got {n}"));
    }
    let bins = h * w;
    let mut mean = vec![Complex::new(0.0, 0.0); bins];
    for coeffs in plane_spectra(fields)? {
        for (m, z) in mean.iter_mut().zip(&coeffs) {
            *m += z;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut variance = vec![0.0; bins];
    for coeffs in plane_spectra(fields)? {
        for ((v, z), m) in variance.iter_mut().zip(&coeffs).zip(&mean) {
            *v += (z - m).norm_sqr();
        }
    }
    variance.iter_mut().for_each(|v| *v /= n as f64);

    let scale = variance.iter().copied().fold(0.0, f64::max);
    let live: Vec<usize> = (0..bins).filter(|&i| variance[i] > 1e-24 * scale.max(f64::MIN_POSITIVE)).collect();
    let total = live.len() * live.len().saturating_sub(1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= max_pairs {
        (0..live.len())
            .flat_map(|a| (a + 1..live.len()).map(move |b| (a, b)))
            .map(|(a, b)| (live[a], live[b]))
            .collect()
    } else {
        let mut g = rng::seeded(seed);
        sample_indices(&mut g, total, max_pairs)
            .into_iter()
            .map(|k| unrank_pair(k, live.len()))
            .map(|(a, b)| (live[a], live[b]))
            .collect()
    };
    let mut cross = vec![Complex::new(0.0, 0.0); pairs.len()];
    if !pairs.is_empty() {
        for coeffs in plane_spectra(fields)? {
            for (acc, &(i, j)) in cross.iter_mut().zip(&pairs) {
                *acc += (coeffs[i] - mean[i]) * (coeffs[j] - mean[j]).conj();
            }
        }
    }
    let max_correlation = cross
        .iter()
        .zip(&pairs)
        .map(|(s, &(i, j))| s.norm() / n as f64 / (variance[i] * variance[j]).sqrt())
        .fold(0.0, f64::max);
    Ok(FourierCovariance { variance, max_correlation, pairs: pairs.len() })
}

/// Maps `k < n(n-1)/2` to the `k`-th pair `(a, b)`, `a < b < n`, in
/// row-major order.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut a = 0;
    loop {
        let row = n - 1 - a;
        if k < row {
            return (a, a + 1 + k);
        }
        k -= row;
        a += 1;
    }
}

fn flat_rows<R: Real>(t: &TensorField<R>) -> Vec<Vec<f64>> {
    t.samples().map(|s| s.iter().map(|v| v.as_f64()).collect()).collect()
}

fn mean_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in a {
        let mut row = 0.0;
        for y in b {
            row += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
        total += row;
    }
    total / (a.len() * b.len()) as f64
}

/// `2E‖A−B‖ − E‖A−A'‖ − E‖B−B'‖`, with every expectation taken over all
/// ordered pairs (diagonal included).
///
/// This form is a squared distance between empirical distributions, so it
/// is never negative and vanishes when the two sets are equal as multisets.
pub fn energy_distance<R: Real>(a: &TensorField<R>, b: &TensorField<R>) -> Result<f64> {
    if a.batch() == 0 || b.batch() == 0 {
        return invalid("energy distance needs nonempty sample sets");
    }
    if a.sample_len() != b.sample_len() {
        return Err(SagdError::ShapeMismatch(format!("dims {} and {}", a.sample_len(), b.sample_len())));
    }
    let (ra, rb) = (flat_rows(a), flat_rows(b));
    let ed = 2.0 * mean_pair_distance(&ra, &rb) - mean_pair_distance(&ra, &ra) - mean_pair_distance(&rb, &rb);
    Ok(ed.max(0.0))
}

/// `‖s_fd − s‖ / max(‖s‖, 1)` maximized over `points`, where `s_fd` is the
/// central-difference gradient of `log_density` with step `h`.
pub fn finite_diff_score_check<F, S>(log_density: F, score: S, points: &[Vec<f64>], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
    S: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return invalid(format!("step must be positive, got {h}"));
    }
    let mut worst: f64 = 0.0;
    for x in points {
        let s = score(x)?;
        let mut p = x.clone();
        let mut err = 0.0;
        for i in 0..x.len() {
            p[i] = x[i] + h;
            let up = log_density(&p)?;
            p[i] = x[i] - h;
            let down = log_density(&p)?;
            p[i] = x[i];
            let d = (up - down) / (2.0 * h) - s[i];
            err += d * d;
        }
        let scale = s.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        worst = worst.max(err.sqrt() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::presets::three_mode;
    use crate::spectral::{sample_shaped_noise, AnisotropicCovariance, NoiseMode, SpectralWeight};
    use approx::assert_relative_eq;

    fn white(batch: usize, n: usize, seed: u64) -> TensorField<f64> {
        let cov = AnisotropicCovariance::<f64>::from_weight(&SpectralWeight::ones(FrequencyGrid::new(n, n).unwrap()));
        sample_shaped_noise(&cov, batch, 1, seed, NoiseMode::Raw).unwrap()
    }

    fn plw(batch: usize, n: usize, alpha: f64, seed: u64) -> TensorField<f64> {
        let w = SpectralWeight::power_law(FrequencyGrid::new(n, n).unwrap(), alpha, 1e-10).unwrap();
        sample_shaped_noise(&AnisotropicCovariance::from_weight(&w), batch, 1, seed, NoiseMode::Raw).unwrap()
    }

    fn spectrum(centers: Vec<f64>, power: Vec<f64>) -> RadialSpectrum {
        let counts = vec![1; centers.len()];
        RadialSpectrum { centers, power, counts }
    }

    #[test]
    fn slope_fits() {
        let d: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        let exact = spectrum(d.clone(), d.iter().map(|x| 3.0 * x.powf(1.7)).collect());
        let fit = fit_loglog_slope(&exact, 0.0, 1.0).unwrap();
        assert!((fit.slope - 1.7).abs() < 1e-10);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        let flat = spectrum(d.clone(), vec![2.0; 9]);
        assert!(fit_loglog_slope(&flat, 0.0, 1.0).unwrap().slope.abs() < 1e-12);
        let two = spectrum(vec![0.1, 0.8], vec![1.0, 64.0]);
        let mut with_bad = two.clone();
        with_bad.centers.push(0.5);
        with_bad.power.push(0.0);
        let fit = fit_loglog_slope(&with_bad, 0.0, 1.0).unwrap();
        assert_relative_eq!(fit.slope, 2.0, max_relative = 1e-12);
        assert_eq!(fit.skipped, 1);
        assert!(fit_loglog_slope(&two, 0.0, 1.0).is_err());
    }

    #[test]
    fn rapsd_validates() {
        assert!(rapsd(&white(4, 8, 0), 3).is_err());
        assert!(rapsd(&TensorField::<f64>::images(0, 1, 8, 8), 8).is_err());
        assert!(rapsd(&TensorField::<f64>::vectors(4, 8), 8).is_err());
    }

    #[test]
    fn white_noise_has_flat_spectrum() {
        let spec = rapsd(&white(10_000, 32, 5), 16).unwrap();
        assert!(spec.centers.windows(2).all(|p| p[0] < p[1]));
        let fit = fit_loglog_slope(&spec, 0.1, 0.8).unwrap();
        assert!(fit.slope.abs() < 0.05, "{}", fit.slope);
        assert!(spec.power.iter().all(|p| (p - 1.0).abs() < 0.05));
    }

    #[test]
    fn shaped_noise_slopes() {
        for alpha in [-0.5, 0.5] {
            let spec = rapsd(&plw(2000, 32, alpha, 9), 16).unwrap();
            let fit = fit_loglog_slope(&spec, 0.1, 0.8).unwrap();
            assert!((fit.slope - 2.0 * alpha).abs() < 0.1, "alpha {alpha}: {}", fit.slope);
        }
    }

    #[test]
    fn parseval_and_band_masks() {
        let mut g = rng::seeded(2);
        let mut x = TensorField::<f64>::images(3, 2, 6, 10);
        rng::fill_standard_normal(&mut g, x.data_mut());
        let full = band_energy(&x, Band::full()).unwrap();
        let direct = x.samples().map(|s| s.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 3.0;
        assert!((full - direct).abs() < 1e-6 * direct);
        assert!(band_energy(&x, Band { lo: 0.6, hi: 0.2 }).is_err());

        let grid = FrequencyGrid::<f64>::new(16, 16).unwrap();
        let band = Band::new(0.4, 0.5).unwrap();
        let cov = AnisotropicCovariance::from_weight(&SpectralWeight::band_pass(grid.clone(), band));
        let masked = sample_shaped_noise(&cov, 50, 1, 3, NoiseMode::Raw).unwrap();
        let inside = band_energy(&masked, band).unwrap();
        let below = band_energy(&masked, Band::new(0.0, 0.39).unwrap()).unwrap();
        let above = band_energy(&masked, Band::new(0.51, 1.0).unwrap()).unwrap();
        assert!(inside > 1.0);
        assert!(below < 1e-20 && above < 1e-20);
    }

    #[test]
    fn white_band_energy_tracks_bin_count() {
        let grid = FrequencyGrid::<f64>::new(16, 16).unwrap();
        let band = Band::new(0.2, 0.6).unwrap();
        let bins = grid.norm_radius().iter().filter(|&&d| band.contains(d)).count() as f64;
        let e = band_energy(&white(4000, 16, 8), band).unwrap();
        assert!((e / bins - 1.0).abs() < 0.02, "{}", e / bins);
    }

    #[test]
    fn fourier_cov_of_white_and_constant_fields() {
        let n = 4000;
        let est = empirical_fourier_cov(&white(n, 8, 11), 200, 1).unwrap();
        assert!(est.variance.iter().all(|v| (v - 1.0).abs() < 0.1));
        assert_eq!(est.pairs, 200);
        assert!(est.max_correlation < 3.0 / (n as f64).sqrt() * 1.5, "{}", est.max_correlation);
        let constant = TensorField::new(vec![100, 1, 4, 4], vec![0.7; 1600]).unwrap();
        let est = empirical_fourier_cov(&constant, 100, 0).unwrap();
        assert!(est.variance.iter().all(|&v| v < 1e-24));
        assert_eq!(est.max_correlation, 0.0);
        assert!(empirical_fourier_cov(&white(99, 4, 0), 10, 0).is_err());
    }

    #[test]
    fn pair_unranking_covers_all_pairs() {
        let n = 6;
        let all: Vec<_> = (0..15).map(|k| unrank_pair(k, n)).collect();
        let expected: Vec<_> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn energy_distance_basics() {
        let gm = three_mode::<f64>();
        let a = gm.sample(500, 1);
        assert!(energy_distance(&a, &a).unwrap().abs() < 1e-12);
        let shuffled = a.select(&(0..500).rev().collect::<Vec<_>>());
        assert!(energy_distance(&a, &shuffled).unwrap() < 1e-6);
        let b = gm.sample(500, 2);
        assert_relative_eq!(energy_distance(&a, &b).unwrap(), energy_distance(&b, &a).unwrap(), max_relative = 1e-12);
        assert!(energy_distance(&a, &TensorField::<f64>::vectors(3, 3)).is_err());

        let mut g = rng::seeded(4);
        let mut x = TensorField::<f64>::vectors(4096, 1);
        let mut y = TensorField::<f64>::vectors(4096, 1);
        rng::fill_standard_normal(&mut g, x.data_mut());
        rng::fill_standard_normal(&mut g, y.data_mut());
        let y = y.map(|v| v + 3.0);
        assert!(energy_distance(&x, &y).unwrap() > 1.0);
    }

    #[test]
    fn independent_mixture_draws_are_close() {
        let gm = three_mode::<f64>();
        let ed = energy_distance(&gm.sample(4096, 10), &gm.sample(4096, 11)).unwrap();
        assert!(ed < 0.02, "{ed}");
    }

    #[test]
    fn finite_difference_check() {
        let gm = three_mode::<f64>();
        let pts: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![-1.5, -1.0], vec![2.0, 2.0]];
        let err = finite_diff_score_check(|x| gm.log_density(x), |x| gm.score(x), &pts, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
        let wrong = finite_diff_score_check(|x| gm.log_density(x), |x| Ok(vec![0.0; x.len()]), &pts, 1e-5).unwrap();
        assert!(wrong > 0.1);
    }
}
