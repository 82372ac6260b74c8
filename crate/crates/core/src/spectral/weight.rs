use crate::error::{invalid, Result, SagdError};
use crate::scalar::Real;

use super::grid::FrequencyGrid;

/// Floor added to the radius before raising it to a power, so the DC bin
/// keeps a positive weight.
pub const DEFAULT_FLOOR: f64 = 1e-10;

/// A closed radial band `[lo, hi]` in normalized radius units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > 1.0 {
            return invalid(format!("band [{lo}, {hi}] must lie inside [0, 1]"));
        }
        if lo > hi {
            return invalid(format!("band lower edge {lo} exceeds upper edge {hi}"));
        }
        Ok(Self { lo, hi })
    }

    pub fn full() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    #[inline]
    pub fn contains<R: Real>(&self, d: R) -> bool {
        let d = d.as_f64();
        self.lo <= d && d <= self.hi
    }
}

/// Nonnegative real amplitude per frequency bin.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWeight<R> {
    grid: FrequencyGrid<R>,
    values: Vec<R>,
}

impl<R: Real> SpectralWeight<R> {
    pub fn from_values(grid: FrequencyGrid<R>, values: Vec<R>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SagdError::ShapeMismatch(format!(
                "{} weights for a grid of {} bins",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < R::zero()) {
            return invalid("spectral weights must be finite and nonnegative");
        }
        Ok(Self { grid, values })
    }

    /// White noise: every bin weighted by one.
    pub fn ones(grid: FrequencyGrid<R>) -> Self {
        let values = vec![R::one(); grid.len()];
        Self { grid, values }
    }

    /// `(r + floor)^alpha`.
    pub fn power_law(grid: FrequencyGrid<R>, alpha: f64, floor: f64) -> Result<Self> {
        if !(floor > 0.0) || !floor.is_finite() {
            return invalid(format!("power-law floor must be positive, got {floor}"));
        }
        if !alpha.is_finite() {
            return invalid("power-law exponent must be finite");
        }
        let values = grid.radius().iter().map(|&r| R::of((r.as_f64() + floor).powf(alpha))).collect();
        Self::from_values(grid, values)
    }

    /// Indicator of `band` over the normalized radius.
    pub fn band_pass(grid: FrequencyGrid<R>, band: Band) -> Self {
        let values = grid.norm_radius().iter().map(|&d| if band.contains(d) { R::one() } else { R::zero() }).collect();
        Self { grid, values }
    }

    /// `γ_l·M[low] + γ_h·M[high]`.
    ///
    /// When `low.hi < high.lo` the open gap between the bands gets weight
    /// zero, which makes the induced covariance singular.
    pub fn two_band(grid: FrequencyGrid<R>, gamma_low: f64, low: Band, gamma_high: f64, high: Band) -> Result<Self> {
        if !(gamma_low >= 0.0 && gamma_high >= 0.0) || !gamma_low.is_finite() || !gamma_high.is_finite() {
            return invalid(format!("band gains must be nonnegative, got {gamma_low} and {gamma_high}"));
        }
        let values = grid
            .norm_radius()
            .iter()
            .map(|&d| {
                let mut v = 0.0;
                if low.contains(d) {
                    v += gamma_low;
                }
                if high.contains(d) {
                    v += gamma_high;
                }
                R::of(v)
            })
            .collect();
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &FrequencyGrid<R> {
        &self.grid
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    /// Per-bin power `|w|²`, the eigenvalues of the induced covariance.
    pub fn power(&self) -> Vec<R> {
        self.values.iter().map(|&v| v * v).collect()
    }

    /// Scalar `C` with `C² · mean(|w|²) = 1`.
    pub fn energy_calibration(&self) -> Result<R> {
        let total: f64 = self.values.iter().map(|v| v.as_f64() * v.as_f64()).sum();
        if total <= 0.0 {
            return Err(SagdError::DegenerateWeight);
        }
        Ok(R::of((total / self.values.len() as f64).powf(-0.5)))
    }
}
