//! Batched real fields.
//!
//! A [`TensorField`] is either a batch of images `(batch, channels, height,
//! width)` or a batch of vectors `(batch, dim)`, stored row-major.

use crate::error::{Result, SagdError};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorField<R> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> TensorField<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        if shape.is_empty() {
            return Err(SagdError::ShapeMismatch("empty shape".into()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(SagdError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SagdError::InvalidArgument("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![R::zero(); n] }
    }

    pub fn images(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self::zeros(vec![batch, channels, height, width])
    }

    pub fn vectors(batch: usize, dim: usize) -> Self {
        Self::zeros(vec![batch, dim])
    }

    pub fn from_rows(rows: &[Vec<R>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(SagdError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(vec![rows.len(), dim], rows.concat())
    }

    /// Skips the finiteness check; used on hot paths whose inputs are
    /// already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<R>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of values per batch element.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, i: usize) -> &[R] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [R] {
        let n = self.sample_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn samples(&self) -> std::slice::Chunks<'_, R> {
        self.data.chunks(self.sample_len().max(1))
    }

    /// `(channels, height, width)` for image-shaped fields.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        match self.shape[..] {
            [_, c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }

    /// Iterates over every `height × width` plane (batch-major, then channel).
    pub fn planes(&self) -> Result<std::slice::Chunks<'_, R>> {
        let (_, h, w) = self
            .image_dims()
            .ok_or_else(|| SagdError::ShapeMismatch(format!("expected image field, got {:?}", self.shape)))?;
        Ok(self.data.chunks(h * w))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(SagdError::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, a: R) -> Self {
        self.map(|v| v * a)
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: R, other: &Self, b: R) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&x, &y)| a * x + b * y).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lin_comb(R::one(), other, -R::one())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.lin_comb(R::one(), other, R::one())
    }

    pub fn norm(&self) -> R {
        self.data.iter().map(|&v| v * v).sum::<R>().sqrt()
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().fold(R::zero(), |m, v| m.max(v.abs()))
    }

    /// Keeps the batch elements at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        let data = indices.iter().flat_map(|&i| self.sample(i).iter().copied()).collect();
        Self::from_parts(shape, data)
    }

    /// Concatenates along the batch axis.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| SagdError::InvalidArgument("nothing to concatenate".into()))?;
        let mut shape = first.shape.clone();
        shape[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(SagdError::ShapeMismatch(format!("{:?} vs {:?}", p.shape, first.shape)));
            }
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_parts(shape, data))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(SagdError::ShapeMismatch(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn cast<S: Real>(&self) -> TensorField<S> {
        TensorField::from_parts(self.shape.clone(), self.data.iter().map(|v| S::of(v.as_f64())).collect())
    }
}
