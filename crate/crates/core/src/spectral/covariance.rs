use crate::error::{invalid, Result, SagdError};
use crate::linalg::Matrix;
use crate::scalar::{loose_tol, Real};
use crate::tensor::TensorField;

use super::fft::Fft2;
use super::weight::SpectralWeight;

/// Default relative threshold below which an eigenvalue counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Eigenbasis of a covariance operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Basis<R> {
    /// The 2D DFT basis on `height × width` planes, applied matrix-free.
    Fourier { height: usize, width: usize },
    /// Orthonormal columns of a dense `dim × dim` matrix.
    Explicit(Matrix<R>),
}

/// Symmetric PSD covariance stored as eigenbasis plus eigenvalues.
///
/// In the Fourier case the eigenvalues are the per-bin power `|w(f)|²` and
/// every operation is a per-bin multiply between a forward and an inverse
/// FFT, applied independently to each `(sample, channel)` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct AnisotropicCovariance<R> {
    basis: Basis<R>,
    eigenvalues: Vec<R>,
}

impl<R: Real> AnisotropicCovariance<R> {
    /// `Σ_w = F⁻¹ Diag(|w|²) F`.
    pub fn from_weight(weight: &SpectralWeight<R>) -> Self {
        let g = weight.grid();
        Self { basis: Basis::Fourier { height: g.height(), width: g.width() }, eigenvalues: weight.power() }
    }

    /// Fourier-diagonal covariance from raw per-bin eigenvalues.
    ///
    /// The eigenvalues must be symmetric under `f → -f`, otherwise the
    /// operator would not map real fields to real fields.
    pub fn fourier(height: usize, width: usize, eigenvalues: Vec<R>) -> Result<Self> {
        if height == 0 || width == 0 || eigenvalues.len() != height * width {
            return Err(SagdError::ShapeMismatch(format!(
                "{} eigenvalues for a {height}x{width} grid",
                eigenvalues.len()
            )));
        }
        check_nonnegative(&eigenvalues)?;
        for r in 0..height {
            for c in 0..width {
                let mirror = ((height - r) % height) * width + (width - c) % width;
                if eigenvalues[r * width + c] != eigenvalues[mirror] {
                    return invalid("Fourier eigenvalues must be symmetric under f -> -f");
                }
            }
        }
        Ok(Self { basis: Basis::Fourier { height, width }, eigenvalues })
    }

    /// `U Diag(λ) Uᵀ` for an orthonormal `U` (checked to within 1e-10).
    pub fn explicit(basis: Matrix<R>, eigenvalues: Vec<R>) -> Result<Self> {
        if !basis.is_square() || basis.rows() != eigenvalues.len() {
            return Err(SagdError::ShapeMismatch(format!(
                "basis is {}x{} but there are {} eigenvalues",
                basis.rows(),
                basis.cols(),
                eigenvalues.len()
            )));
        }
        if !basis.has_orthonormal_columns(loose_tol(1e-10, 64.0)) {
            return invalid("explicit basis must have orthonormal columns");
        }
        check_nonnegative(&eigenvalues)?;
        Ok(Self { basis: Basis::Explicit(basis), eigenvalues })
    }

    /// Diagonal covariance in the standard basis.
    pub fn diagonal(eigenvalues: Vec<R>) -> Result<Self> {
        Self::explicit(Matrix::identity(eigenvalues.len()), eigenvalues)
    }

    pub fn identity(dim: usize) -> Self {
        Self { basis: Basis::Explicit(Matrix::identity(dim)), eigenvalues: vec![R::one(); dim] }
    }

    pub fn basis(&self) -> &Basis<R> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[R] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_fourier(&self) -> bool {
        matches!(self.basis, Basis::Fourier { .. })
    }

    pub fn max_eigenvalue(&self) -> R {
        self.eigenvalues.iter().copied().fold(R::zero(), R::max)
    }

    /// Eigenvalues at or below this value are treated as zero.
    pub fn zero_threshold(&self, zero_tol_rel: f64) -> Result<R> {
        if !(zero_tol_rel >= 0.0) {
            return invalid(format!("zero tolerance must be nonnegative, got {zero_tol_rel}"));
        }
        let max = self.max_eigenvalue();
        if max <= R::zero() {
            return Err(SagdError::DegenerateCovariance);
        }
        Ok(max * R::of(zero_tol_rel))
    }

    pub fn is_full_rank(&self, zero_tol_rel: f64) -> bool {
        match self.zero_threshold(zero_tol_rel) {
            Ok(thr) => self.eigenvalues.iter().all(|&l| l > thr),
            Err(_) => false,
        }
    }

    /// Same eigenbasis, eigenvalues multiplied by `c`.
    pub fn scaled(&self, c: R) -> Result<Self> {
        if !(c >= R::zero()) {
            return invalid("covariance scale must be nonnegative");
        }
        Ok(Self { basis: self.basis.clone(), eigenvalues: self.eigenvalues.iter().map(|&l| l * c).collect() })
    }

    /// Applies `U Diag(f(λ)) U*` to every sample (explicit basis) or plane
    /// (Fourier basis) of `x`.
    pub fn apply_spectral(&self, x: &TensorField<R>, f: impl Fn(R) -> R) -> Result<TensorField<R>> {
        let factors: Vec<R> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        self.apply_factors(x, &factors)
    }

    fn apply_factors(&self, x: &TensorField<R>, factors: &[R]) -> Result<TensorField<R>> {
        match &self.basis {
            Basis::Fourier { height, width } => {
                let (_, h, w) = x.image_dims().ok_or_else(|| {
                    SagdError::ShapeMismatch(format!("Fourier covariance needs image fields, got {:?}", x.shape()))
                })?;
                if (h, w) != (*height, *width) {
                    return Err(SagdError::ShapeMismatch(format!(
                        "covariance grid {height}x{width} vs field planes {h}x{w}"
                    )));
                }
                let fft = Fft2::new(h, w);
                let mut out = TensorField::zeros(x.shape().to_vec());
                for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
                    fft.filter_real(src, factors, dst);
                }
                Ok(out)
            }
            Basis::Explicit(u) => {
                if x.sample_len() != self.dim() {
                    return Err(SagdError::ShapeMismatch(format!(
                        "covariance dim {} vs sample length {}",
                        self.dim(),
                        x.sample_len()
                    )));
                }
                let mut out = TensorField::zeros(x.shape().to_vec());
                for i in 0..x.batch() {
                    let mut coeff = u.matvec_t(x.sample(i));
                    coeff.iter_mut().zip(factors).for_each(|(c, &f)| *c = *c * f);
                    out.sample_mut(i).copy_from_slice(&u.matvec(&coeff));
                }
                Ok(out)
            }
        }
    }

    /// `Σ x`.
    pub fn apply(&self, x: &TensorField<R>) -> Result<TensorField<R>> {
        self.apply_spectral(x, |l| l)
    }

    /// `Σ^{1/2} x`; in the Fourier case this is the shaping operator `T_w`.
    pub fn apply_sqrt(&self, x: &TensorField<R>) -> Result<TensorField<R>> {
        self.apply_spectral(x, |l| l.sqrt())
    }

    /// Moore–Penrose pseudoinverse `Σ⁺ x`.
    pub fn apply_pinv(&self, x: &TensorField<R>, zero_tol_rel: f64) -> Result<TensorField<R>> {
        let thr = self.zero_threshold(zero_tol_rel)?;
        self.apply_spectral(x, |l| if l > thr { R::one() / l } else { R::zero() })
    }

    /// Orthogonal projector onto `range(Σ)`, as a covariance with
    /// eigenvalues in `{0, 1}`.
    pub fn support_projector(&self, zero_tol_rel: f64) -> Result<Self> {
        let thr = self.zero_threshold(zero_tol_rel)?;
        Ok(Self {
            basis: self.basis.clone(),
            eigenvalues: self.eigenvalues.iter().map(|&l| if l > thr { R::one() } else { R::zero() }).collect(),
        })
    }

    /// Orthogonal projector onto the null space of `Σ`.
    pub fn null_projector(&self, zero_tol_rel: f64) -> Result<Self> {
        let thr = self.zero_threshold(zero_tol_rel)?;
        Ok(Self {
            basis: self.basis.clone(),
            eigenvalues: self.eigenvalues.iter().map(|&l| if l > thr { R::zero() } else { R::one() }).collect(),
        })
    }

    /// Applies `f(Σ)` to a single flattened sample.
    pub fn apply_vector_spectral(&self, x: &[R], f: impl Fn(R) -> R) -> Result<Vec<R>> {
        let field = match &self.basis {
            Basis::Fourier { height, width } => TensorField::new(vec![1, 1, *height, *width], x.to_vec())?,
            Basis::Explicit(_) => TensorField::new(vec![1, x.len()], x.to_vec())?,
        };
        Ok(self.apply_spectral(&field, f)?.into_data())
    }

    /// Dense `U Diag(λ) Uᵀ`; explicit basis only.
    pub fn to_dense(&self) -> Result<Matrix<R>> {
        self.dense_spectral(|l| l)
    }

    /// Dense `U Diag(f(λ)) Uᵀ`; explicit basis only.
    pub fn dense_spectral(&self, f: impl Fn(R) -> R) -> Result<Matrix<R>> {
        let Basis::Explicit(u) = &self.basis else {
            return invalid("dense form is only available for explicit bases");
        };
        let n = self.dim();
        let mut scaled = u.clone();
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] = u[(i, j)] * f(self.eigenvalues[j]);
            }
        }
        scaled.matmul(&u.transpose())
    }
}

fn check_nonnegative<R: Real>(values: &[R]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < R::zero()) {
        return invalid("covariance eigenvalues must be finite and nonnegative");
    }
    Ok(())
}
