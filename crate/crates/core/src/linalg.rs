//! Minimal dense row-major matrix used by the adapters, router and post map.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_dim("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self · x`
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, u: &[T], v: &[T], scale: T) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (i, &ui) in u.iter().enumerate() {
            let s = ui * scale;
            if s == T::zero() {
                continue;
            }
            for (m, &vj) in self.data[i * cols..(i + 1) * cols].iter_mut().zip(v) {
                *m += s * vj;
            }
        }
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<T> {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Gram-Schmidt orthonormalisation of the rows of `m`, in place.
/// Rows that collapse numerically are replaced by the next unused unit axis.
pub fn orthonormalize_rows<T: Scalar>(m: &mut Matrix<T>) {
    let (rows, cols) = (m.rows, m.cols);
    let mut axis = 0;
    for i in 0..rows {
        loop {
            let mut v = m.row(i).to_vec();
            for _ in 0..2 {
                for j in 0..i {
                    let prev = m.row(j).to_vec();
                    let p = dot(&v, &prev);
                    for (a, b) in v.iter_mut().zip(&prev) {
                        *a -= p * *b;
                    }
                }
            }
            let n = norm(&v);
            if n > T::lit(1e-6) {
                for (dst, x) in m.data[i * cols..(i + 1) * cols].iter_mut().zip(v) {
                    *dst = x / n;
                }
                break;
            }
            let row = &mut m.data[i * cols..(i + 1) * cols];
            row.iter_mut().for_each(|x| *x = T::zero());
            row[axis % cols] = T::one();
            axis += 1;
        }
    }
}
