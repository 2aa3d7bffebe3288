//! Dense row-major `f64` tensors.
//!
//! Everything in this crate is small (state vectors of a dozen entries,
//! weight matrices topping out around 128x128), so a flat `Vec<f64>` with an
//! explicit shape beats any cleverness. Shape mismatches are programmer
//! errors and panic; numeric error states (NaN/Inf) are caught at module
//! boundaries, not here.

use serde::{Deserialize, Serialize};

/// Contiguous row-major tensor. Rank 0 (scalar) is a single-element tensor
/// with an empty shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, data.len(), "shape {shape:?} does not match data length {}", data.len());
        Tensor { shape, data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![], data: vec![x] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![0.0; len] }
    }

    pub fn full(shape: Vec<usize>, x: f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![x; len] }
    }

    /// n x n identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of {} elements", self.data.len());
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on rank-{} tensor", self.shape.len());
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on rank-{} tensor", self.shape.len());
        self.shape[1]
    }

    /// Entry (i, j) of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry; 0 for the empty tensor.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eye_has_unit_diagonal() {
        let i = Tensor::eye(3);
        assert_eq!(i.at(0, 0), 1.0);
        assert_eq!(i.at(1, 2), 0.0);
        assert_eq!(i.data().iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn scalar_roundtrip() {
        let s = Tensor::scalar(2.5);
        assert!(s.is_scalar());
        assert_eq!(s.item(), 2.5);
        assert!(s.shape().is_empty());
    }

    #[test]
    #[should_panic(expected = "does not match data length")]
    fn shape_mismatch_panics() {
        Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn max_abs_ignores_sign() {
        let t = Tensor::vector(vec![1.0, -4.0, 2.0]);
        assert_eq!(t.max_abs(), 4.0);
    }
}
