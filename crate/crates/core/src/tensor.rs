//! Dense multi-bit tensors: per-neuron currents over (time, token, feature)
//! and weight matrices.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Dense `T x N x D` tensor stored time-major, then token, then feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3<S> {
    t: usize,
    n: usize,
    d: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor3<S> {
    pub fn zeros(t: usize, n: usize, d: usize) -> Self {
        Self {
            t,
            n,
            d,
            data: vec![S::zero(); t * n * d],
        }
    }

    pub fn from_vec(t: usize, n: usize, d: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != t * n * d {
            return shape_err(format!(
                "tensor {t}x{n}x{d} needs {} values, got {}",
                t * n * d,
                data.len()
            ));
        }
        Ok(Self { t, n, d, data })
    }

    pub fn from_fn(t: usize, n: usize, d: usize, mut f: impl FnMut(usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(t * n * d);
        for ti in 0..t {
            for ni in 0..n {
                for di in 0..d {
                    data.push(f(ti, ni, di));
                }
            }
        }
        Self { t, n, d, data }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t, self.n, self.d)
    }

    #[inline]
    pub fn get(&self, t: usize, n: usize, d: usize) -> S {
        self.data[(t * self.n + n) * self.d + d]
    }

    #[inline]
    pub fn set(&mut self, t: usize, n: usize, d: usize, v: S) {
        self.data[(t * self.n + n) * self.d + d] = v;
    }

    #[inline]
    pub fn add_at(&mut self, t: usize, n: usize, d: usize, v: S) {
        self.data[(t * self.n + n) * self.d + d] += v;
    }

    /// The `D`-wide feature row at `(t, n)`.
    #[inline]
    pub fn row(&self, t: usize, n: usize) -> &[S] {
        let start = (t * self.n + n) * self.d;
        &self.data[start..start + self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize, n: usize) -> &mut [S] {
        let start = (t * self.n + n) * self.d;
        &mut self.data[start..start + self.d]
    }

    /// All `N x D` values at time point `t`.
    pub fn time_slice(&self, t: usize) -> &[S] {
        let stride = self.n * self.d;
        &self.data[t * stride..(t + 1) * stride]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dims() != other.dims() {
            return shape_err(format!(
                "cannot add {:?} and {:?}",
                self.dims(),
                other.dims()
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Self { data, ..*self })
    }

    /// Features `[start, start + width)` as a new tensor.
    pub fn feature_slice(&self, start: usize, width: usize) -> Result<Self> {
        if start + width > self.d {
            return shape_err(format!(
                "feature slice {start}..{} exceeds D={}",
                start + width,
                self.d
            ));
        }
        Ok(Self::from_fn(self.t, self.n, width, |t, n, d| self.get(t, n, start + d)))
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    /// Matrix made of the given source rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns `[start, start + width)`.
    pub fn column_slice(&self, start: usize, width: usize) -> Result<Self> {
        if start + width > self.cols {
            return shape_err(format!(
                "column slice {start}..{} exceeds cols={}",
                start + width,
                self.cols
            ));
        }
        Ok(Self::from_fn(self.rows, width, |r, c| self.get(r, start + c)))
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return shape_err(format!(
                "hconcat row mismatch: {} vs {}",
                self.rows, other.rows
            ));
        }
        let cols = self.cols + other.cols;
        Ok(Self::from_fn(self.rows, cols, |r, c| {
            if c < self.cols {
                self.get(r, c)
            } else {
                other.get(r, c - self.cols)
            }
        }))
    }
}
