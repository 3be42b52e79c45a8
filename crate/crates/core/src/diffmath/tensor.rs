//! Dense row-major f64 tensor.

use crate::error::{Error, Result};

/// Dense n-dimensional array of 64-bit floats, row-major.
///
/// Plain value type: participation in a gradient computation happens by
/// registering a tensor on a [`super::Tape`], which hands back a tracked
/// [`super::Var`] handle.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension {
                op: "Tensor::new",
                detail: format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// A scalar is rank 0 or any single-element tensor.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Rank {
                op: "Tensor::item",
                detail: format!("expected scalar, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// Index into a rank-3 tensor \[d0, d1, d2\].
    #[inline]
    pub fn at3(&self, a: usize, b: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(a * self.shape[1] + b) * self.shape[2] + c]
    }

    #[inline]
    pub fn set3(&mut self, a: usize, b: usize, c: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(a * self.shape[1] + b) * self.shape[2] + c] = v;
    }

    /// Index into a rank-2 tensor \[d0, d1\].
    #[inline]
    pub fn at2(&self, a: usize, b: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[a * self.shape[1] + b]
    }

    /// Reinterpret with a new shape of the same element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension {
                op: "Tensor::reshaped",
                detail: format!("cannot view {} elements as {:?}", self.data.len(), shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Max absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::new(vec![2, 2, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(0, 1, 0), 2.0);
        assert_eq!(t.at3(1, 0, 1), 5.0);
        assert_eq!(t.at3(1, 1, 1), 7.0);
    }

    #[test]
    fn item_rejects_non_scalar() {
        assert!(Tensor::zeros(&[2]).item().is_err());
        assert_eq!(Tensor::scalar(3.5).item().unwrap(), 3.5);
    }
}
