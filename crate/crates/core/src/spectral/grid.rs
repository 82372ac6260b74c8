use crate::error::{invalid, Result};
use crate::scalar::Real;

/// DFT frequency of index `k` on an axis of length `n`, in cycles/sample.
///
/// Follows the usual ordering `0, 1/n, …, -1/n`, so every value lies in
/// `[-1/2, 1/2)`.
pub fn dft_frequency(k: usize, n: usize) -> f64 {
    let half = n.div_ceil(2);
    if k < half {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Frequency coordinates of an `height × width` DFT grid in standard
/// (unshifted) order; the DC bin sits at index `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid<R> {
    height: usize,
    width: usize,
    fx: Vec<R>,
    fy: Vec<R>,
    radius: Vec<R>,
    norm_radius: Vec<R>,
}

impl<R: Real> FrequencyGrid<R> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("grid dimensions must be positive, got {height}x{width}"));
        }
        let fx64: Vec<f64> = (0..width).map(|k| dft_frequency(k, width)).collect();
        let fy64: Vec<f64> = (0..height).map(|k| dft_frequency(k, height)).collect();
        let r2: Vec<f64> = fy64.iter().flat_map(|&fy| fx64.iter().map(move |&fx| fx * fx + fy * fy)).collect();
        let r2_max = r2.iter().copied().fold(0.0, f64::max);
        let radius = r2.iter().map(|&v| R::of(v.sqrt())).collect();
        // d = sqrt(r²/r²max) keeps shells such as d = 1/2 exact on square grids
        let norm_radius =
            r2.iter().map(|&v| if r2_max > 0.0 { R::of((v / r2_max).sqrt()) } else { R::zero() }).collect();
        Ok(Self {
            height,
            width,
            fx: fx64.into_iter().map(R::of).collect(),
            fy: fy64.into_iter().map(R::of).collect(),
            radius,
            norm_radius,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fx(&self) -> &[R] {
        &self.fx
    }

    pub fn fy(&self) -> &[R] {
        &self.fy
    }

    /// `r(f) = √(fx² + fy²)` per bin, row-major.
    pub fn radius(&self) -> &[R] {
        &self.radius
    }

    /// `r(f) / max r`, so the outermost bin has exactly 1.
    pub fn norm_radius(&self) -> &[R] {
        &self.norm_radius
    }

    /// Row-major index of the bin at `(row, col)`.
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_grid() {
        let g = FrequencyGrid::<f64>::new(1, 1).unwrap();
        assert_eq!(g.radius(), &[0.0]);
        assert_eq!(g.norm_radius(), &[0.0]);
    }

    #[test]
    fn four_by_four() {
        let g = FrequencyGrid::<f64>::new(4, 4).unwrap();
        assert_eq!(g.fx(), &[0.0, 0.25, -0.5, -0.25]);
        assert_eq!(g.radius()[g.index(0, 0)], 0.0);
        assert!((g.radius()[g.index(2, 2)] - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(g.norm_radius()[g.index(2, 2)], 1.0);
    }

    #[test]
    fn odd_axis_frequencies() {
        let f: Vec<f64> = (0..5).map(|k| dft_frequency(k, 5)).collect();
        assert_eq!(f, vec![0.0, 0.2, 0.4, -0.4, -0.2]);
    }

    #[test]
    fn invariants_hold() {
        for (h, w) in [(1, 7), (6, 3), (16, 16), (9, 12)] {
            let g = FrequencyGrid::<f64>::new(h, w).unwrap();
            assert_eq!(g.radius().iter().filter(|&&r| r == 0.0).count(), 1);
            assert!(g.norm_radius().iter().all(|&d| (0.0..=1.0).contains(&d)));
            assert_eq!(g.norm_radius().iter().copied().fold(0.0, f64::max), 1.0);
            assert!(g.fx().iter().chain(g.fy()).all(|&f| (-0.5..0.5).contains(&f)));
        }
    }

    #[test]
    fn half_shell_is_exact() {
        let g = FrequencyGrid::<f64>::new(16, 16).unwrap();
        assert_eq!(g.norm_radius()[g.index(4, 4)], 0.5);
    }

    #[test]
    fn rejects_empty() {
        assert!(FrequencyGrid::<f64>::new(0, 3).is_err());
    }
}
