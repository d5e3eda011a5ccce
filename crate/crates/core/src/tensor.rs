//! Dense row-major f64 tensors.
//!
//! A `Tensor` is a plain value: shape plus flat data, no view machinery.
//! Rank-3 image tensors are laid out (H, W, C) with C fastest. The
//! `requires_grad` flag marks leaves the tape should produce gradients for.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, checking that `data.len()` equals the shape product
    /// and every extent is at least 1.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("Tensor::new", "zero extent in shape"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    numel,
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, (0..numel).map(f).collect())
    }

    /// Marks this tensor as a differentiable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "Tensor::item",
                format!("expected 1 element, got {}", self.data.len()),
            ));
        }
        Ok(self.data[0])
    }

    /// Flat index for a rank-3 (H, W, C) position.
    #[inline]
    pub fn idx3(&self, r: usize, c: usize, ch: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (r * self.shape[1] + c) * self.shape[2] + ch
    }

    /// Element at a rank-3 (H, W, C) position.
    #[inline]
    pub fn at3(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[self.idx3(r, c, ch)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn rank3_indexing_is_channel_fastest() {
        let t = Tensor::from_fn(vec![2, 3, 4], |i| i as f64).unwrap();
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(0, 0, 3), 3.0);
        assert_eq!(t.at3(0, 1, 0), 4.0);
        assert_eq!(t.at3(1, 0, 0), 12.0);
        assert_eq!(t.at3(1, 2, 3), 23.0);
    }

    #[test]
    fn item_requires_single_element() {
        assert_eq!(Tensor::scalar(5.0).item().unwrap(), 5.0);
        assert!(Tensor::zeros(vec![2]).unwrap().item().is_err());
    }
}
