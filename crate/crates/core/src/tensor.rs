use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure!(data.len() == rows * cols, InvalidInput, "matrix data has {} elements, expected {rows}x{cols}", data.len());
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            ensure!(r.as_ref().len() == cols, InvalidInput, "row {i} has {} columns, expected {cols}", r.as_ref().len());
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on zero; an empty-column matrix has no meaningful rows anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }
}

impl Matrix<f32> {
    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

impl Matrix<f64> {
    pub fn to_f32(&self) -> Matrix<f32> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v as f32).collect() }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Cosine similarity `aᵀb / (‖a‖‖b‖)`.
///
/// The denominator is `sqrt(‖a‖²‖b‖²)` rather than the product of two square
/// roots so that `cosine(v, v)` is exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = norm_sq(a);
    let nb = norm_sq(b);
    if na == 0.0 || nb == 0.0 {
        return Err(crate::Error::UndefinedSimilarity);
    }
    let s = dot(a, b) / libm::sqrt(na * nb);
    Ok(s.clamp(-1.0, 1.0))
}

/// `1 − cosine(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine(a, b).map(|s| 1.0 - s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_vector_with_itself_is_exactly_one() {
        for v in [[0.1, 0.2, 0.3], [1e-3, 7.0, -2.5], [3.3, 0.0, 0.0]] {
            assert_eq!(cosine(&v, &v).unwrap(), 1.0);
            assert_eq!(cosine_distance(&v, &v).unwrap(), 0.0);
        }
    }

    #[test]
    fn cosine_rejects_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(crate::Error::UndefinedSimilarity));
    }

    #[test]
    fn from_rows_checks_width() {
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.select_rows(&[1, 0]).row(0), &[3.0, 4.0]);
    }
}
