//! Dense row-major tensors.

use crate::error::{Error, Result};

/// Element type for graphs: `f32` for training, `f64` for checking.
pub trait Scalar:
    num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

pub const MAX_AXES: usize = 4;

/// Shape + row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> TensorData<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_AXES {
            return Err(Error::shape(format!(
                "tensors carry 1 to {MAX_AXES} axes, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n == 0 || n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} does not describe {} values",
                data.len()
            )));
        }
        Ok(TensorData { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        TensorData::new(shape, vec![T::zero(); n])
    }

    pub fn scalar(v: T) -> Self {
        TensorData {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64_slice(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        TensorData::new(shape, values.iter().map(|v| T::from_f64(*v)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `(outer, axis_len, inner)` factorization around `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
