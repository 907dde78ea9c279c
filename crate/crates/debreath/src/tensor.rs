//! Dense n-dimensional tensors, the common currency of the model and
//! training modules.
//!
//! Values are stored row-major. Elements are generic over [`Scalar`] so the
//! same kernels run in f32 for normal training and in f64 for gradient
//! checks.

use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of tensors and autodiff graphs.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
    /// Marks the tensor as a trainable leaf when loaded into a graph.
    pub requires_grad: bool,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Invariant(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        if expect != data.len() {
            return Err(Error::Invariant(format!(
                "tensor shape {shape:?} implies {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![E::zero(); n],
            requires_grad: false,
        }
    }

    pub fn filled(shape: Vec<usize>, value: E) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Single value of a rank-0/scalar-like tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The four extents of an NHWC activation tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, h, w, c] => Ok([n, h, w, c]),
            _ => Err(Error::Input(format!(
                "expected a rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Convert elementwise to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| T::from_f64(Scalar::to_f64(v)))
                .collect(),
            requires_grad: self.requires_grad,
        }
    }
}

/// Deterministic pairwise summation of `f(0..n)`.
///
/// The reduction order depends only on `n`, which pins the floating-point
/// result regardless of how callers might otherwise chunk the work.
pub fn pairwise_sum<E: Scalar, F: Fn(usize) -> E>(n: usize, f: &F) -> E {
    fn go<E: Scalar, F: Fn(usize) -> E>(lo: usize, hi: usize, f: &F) -> E {
        if hi - lo <= 32 {
            let mut acc = E::zero();
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    if n == 0 {
        E::zero()
    } else {
        go(0, n, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_mismatch() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn new_rejects_zero_extent() {
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_sequential_on_integers() {
        // Integer-valued doubles add exactly, so any summation order agrees.
        let vals: Vec<f64> = (0..1000).map(|i| (i % 97) as f64).collect();
        let seq: f64 = vals.iter().sum();
        let pair = pairwise_sum(vals.len(), &|i| vals[i]);
        assert_eq!(seq, pair);
    }

    #[test]
    fn pairwise_sum_empty_is_zero() {
        assert_eq!(pairwise_sum(0, &|_| 1.0f64), 0.0);
    }
}
