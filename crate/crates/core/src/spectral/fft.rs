//! Two-dimensional FFTs over row-major `height × width` planes.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

/// Planned forward/inverse 2D transforms for one plane size.
///
/// Both directions are unnormalized; `inverse(forward(x)) = H·W·x`.
pub struct Fft2<R: Real> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<R>>,
    row_inv: Arc<dyn Fft<R>>,
    col_fwd: Arc<dyn Fft<R>>,
    col_inv: Arc<dyn Fft<R>>,
}

impl<R: Real> Fft2<R> {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, buf: &mut [Complex<R>], rows: &Arc<dyn Fft<R>>, cols: &Arc<dyn Fft<R>>) {
        assert_eq!(buf.len(), self.len());
        let (h, w) = (self.height, self.width);
        rows.process(buf);
        let mut t = vec![Complex::new(R::zero(), R::zero()); h * w];
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = buf[i * w + j];
            }
        }
        cols.process(&mut t);
        for j in 0..w {
            for i in 0..h {
                buf[i * w + j] = t[j * h + i];
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex<R>]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex<R>]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }

    /// Unitary DFT of a real plane: coefficients scaled by `1/√(H·W)`.
    pub fn unitary_coefficients(&self, plane: &[R]) -> Vec<Complex<R>> {
        let mut buf: Vec<_> = plane.iter().map(|&v| Complex::new(v, R::zero())).collect();
        self.forward(&mut buf);
        let s = R::one() / R::of_usize(self.len()).sqrt();
        buf.iter_mut().for_each(|c| *c = *c * s);
        buf
    }

    /// Computes `Re(F⁻¹(m ⊙ F(plane)))` into `out` and returns the largest
    /// imaginary residue that was dropped.
    pub fn filter_real(&self, plane: &[R], multiplier: &[R], out: &mut [R]) -> R {
        let mut buf: Vec<_> = plane.iter().map(|&v| Complex::new(v, R::zero())).collect();
        self.forward(&mut buf);
        for (c, &m) in buf.iter_mut().zip(multiplier) {
            *c = *c * m;
        }
        self.inverse(&mut buf);
        let norm = R::one() / R::of_usize(self.len());
        let mut residue = R::zero();
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re * norm;
            residue = residue.max((c.im * norm).abs());
        }
        residue
    }
}
