use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Everything in the model stack is a matrix;
/// vectors are `1 x n` and scalars `1 x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("tensor values must be finite".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn from_rows(rows: usize, cols: usize, values: Vec<T>) -> Self {
        assert_eq!(rows * cols, values.len(), "matrix {rows}x{cols} needs {} values", rows * cols);
        Self { shape: vec![rows, cols], values }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { shape: vec![rows, cols], values: vec![T::zero(); rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: T) -> Self {
        Self { shape: vec![rows, cols], values: vec![v; rows * cols] }
    }

    pub fn scalar(v: T) -> Self {
        Self::from_rows(1, 1, vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.values[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> T {
        assert_eq!(self.values.len(), 1, "item() on a non-scalar tensor");
        self.values[0]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.values.len());
        self.shape = vec![rows, cols];
        self
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `self * other`, optionally transposing either operand.
    pub fn matmul_ex(&self, ta: bool, other: &Self, tb: bool) -> Self {
        let (m, k) = if ta { (self.cols(), self.rows()) } else { (self.rows(), self.cols()) };
        let (k2, n) = if tb { (other.cols(), other.rows()) } else { (other.rows(), other.cols()) };
        assert_eq!(k, k2, "inner dimensions differ: {:?} x {:?}", self.shape, other.shape);
        let sa = if ta { (1, self.cols() as isize) } else { (self.cols() as isize, 1) };
        let sb = if tb { (1, other.cols() as isize) } else { (other.cols() as isize, 1) };
        let mut out = Self::zeros(m, n);
        T::gemm(m, k, n, T::one(), &self.values, sa, &other.values, sb, T::zero(), &mut out.values, (n as isize, 1));
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_ex(false, other, false)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.values[j * r + i] = self.values[i * c + j];
            }
        }
        out
    }

    /// Rows `idx` stacked in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut values = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::from_rows(idx.len(), c, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_shape_and_finiteness() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f64; 6]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0f64; 5]), Err(Error::ShapeMismatch(_))));
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let a = Tensor::from_rows(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_rows(2, 3, vec![0.5, -1.0, 2.0, 1.0, 0.0, -2.0]);
        let abt = a.matmul_ex(false, &b, true);
        assert_eq!(abt, a.matmul(&b.transpose()));
        let atb = a.matmul_ex(true, &b, false);
        assert_eq!(atb, a.transpose().matmul(&b));
    }
}
