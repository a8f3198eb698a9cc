//! Dense row-major f64 tensor with an explicit batch dimension first.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// First dimension.
    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch sample.
    #[inline]
    pub fn sample_size(&self) -> usize {
        self.shape[1..].iter().product()
    }

    #[inline]
    pub fn sample(&self, b: usize) -> &[f64] {
        let s = self.sample_size();
        &self.data[b * s..(b + 1) * s]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }
}
