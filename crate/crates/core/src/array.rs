//! Dense row-major float64 arrays.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense, row-major `f64` array with an explicit shape.
///
/// Every entry is finite; constructors reject NaN and infinities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array64 {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array64 {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&s| s == 0) || expected != data.len() {
            return Err(Error::shape("Array64::new", &shape, &[data.len()]));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "array entry {pos} is not finite ({})",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::matrix(r, c, rows.concat())
    }

    /// Builds an array from values computed internally; the caller guarantees
    /// shape consistency and finiteness has been checked upstream.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    /// Like [`Array64::from_parts`] but verifies every entry is finite.
    pub(crate) fn checked(shape: Vec<usize>, data: Vec<f64>, op: &str) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.to_string() });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `‖self − other‖ / max(1, ‖self‖)`, the tolerance measure used for
    /// gradient comparisons.
    pub fn rel_err(&self, other: &Self) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / self.norm().max(1.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|v| v * c).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect(),
        )
    }

    pub fn as_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows(), self.cols(), &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self::from_parts(vec![r, c], data)
    }

    /// Matrix-vector product for a 2-D `self` and a vector `v`.
    pub fn matvec(&self, v: &Self) -> Result<Self> {
        let (r, c) = (self.rows(), self.cols());
        if self.shape.len() != 2 || v.len() != c {
            return Err(Error::shape("matvec", &[c], v.shape()));
        }
        let out = (0..r)
            .map(|i| (0..c).map(|j| self.data[i * c + j] * v.data[j]).sum())
            .collect();
        Ok(Self::from_parts(vec![r], out))
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(vec![c, r], out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.shape.len() != 2 || self.rows() != self.cols() {
            return false;
        }
        let n = self.rows();
        (0..n).all(|i| (0..i).all(|j| (self.at(i, j) - self.at(j, i)).abs() <= tol))
    }
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(m: &Array64) -> f64 {
    let dm = m.as_dmatrix();
    dm.singular_values().iter().fold(0.0_f64, |a, &b| a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(Array64::vector(vec![1.0, f64::NAN]).is_err());
        assert!(Array64::vector(vec![f64::INFINITY]).is_err());
        assert!(Array64::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Array64::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matvec_and_transpose() {
        let a = Array64::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let v = Array64::vector(vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matvec(&v).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(a.transpose().data(), &[1.0, 3.0, 2.0, 4.0]);
        assert!((spectral_norm(&Array64::identity(3)) - 1.0).abs() < 1e-12);
    }
}
