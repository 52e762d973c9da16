//! Dense row-major tensors and define-by-run reverse-mode differentiation.
//!
//! [`Tensor`] is a plain value: a shape and a flat buffer. A [`Graph`] records
//! every differentiable op executed on it, holding each node's value, an
//! optional gradient buffer of the same length and a `requires_grad` flag.
//! The graph is rebuilt for every forward pass; [`Graph::backward`] walks the
//! recorded ops once, in reverse.

mod graph;

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::real::Real;

pub use graph::{Graph, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("slice {start}..{end} out of range for extent {extent}")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph is empty")]
    EmptyGraph,
    #[error("graph was already consumed by backward; run the forward pass again")]
    StaleGraph,
    #[error("{0}: needs at least one input")]
    NoInputs(&'static str),
}

pub type Result<T, E = TensorError> = core::result::Result<T, E>;

/// A dense row-major n-dimensional array.
///
/// The empty shape `[]` is a scalar holding one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// # Panics
    /// If any extent is zero.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    /// # Panics
    /// If any extent is zero.
    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let n = numel(&shape);
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Returns the single element of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts element type (exact when widening).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `out[m×n] += a[m×p] · b[p×n]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for k in 0..p {
            let aik = a[i * p + k];
            let b_row = &b[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bkj;
            }
        }
    }
}

/// `da[m×p] += dout[m×n] · bᵀ`
pub(crate) fn matmul_grad_lhs<T: Real>(
    dout: &[T],
    b: &[T],
    da: &mut [T],
    m: usize,
    p: usize,
    n: usize,
) {
    for i in 0..m {
        let d_row = &dout[i * n..(i + 1) * n];
        for k in 0..p {
            let b_row = &b[k * n..(k + 1) * n];
            let mut acc = T::zero();
            for (&d, &bv) in d_row.iter().zip(b_row) {
                acc = acc + d * bv;
            }
            da[i * p + k] = da[i * p + k] + acc;
        }
    }
}

/// `db[p×n] += aᵀ · dout[m×n]`
pub(crate) fn matmul_grad_rhs<T: Real>(
    a: &[T],
    dout: &[T],
    db: &mut [T],
    m: usize,
    p: usize,
    n: usize,
) {
    for i in 0..m {
        let d_row = &dout[i * n..(i + 1) * n];
        for k in 0..p {
            let aik = a[i * p + k];
            let db_row = &mut db[k * n..(k + 1) * n];
            for (g, &d) in db_row.iter_mut().zip(d_row) {
                *g = *g + aik * d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_checks_length_and_extents() {
        assert!(Tensor::<f64>::new([2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new([2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { .. })
        ));
        assert!(matches!(
            Tensor::<f64>::new([2, 0], vec![]),
            Err(TensorError::ZeroExtent(_))
        ));
        assert_eq!(Tensor::scalar(3.0f64).item(), Some(3.0));
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let t = Tensor::new([2, 6], data.clone()).unwrap();
        let r = t.reshape([3, 4]).unwrap();
        assert_eq!(r.shape(), &[3, 4]);
        assert_eq!(r.data(), &data[..]);
        assert!(r.reshape([5, 2]).is_err());
    }
}
