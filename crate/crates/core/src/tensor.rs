//! Row-major dense matrix and the handful of products the model needs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::{axpy, dot, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    /// Entries drawn i.i.d. from N(0, std^2).
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            })
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// `x · wᵀ`: applies a `(out × in)` weight to every row of a `(n × in)` input.
pub fn linear<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(x.cols, w.cols);
    let mut y = Matrix::zeros(x.rows, w.rows);
    for t in 0..x.rows {
        let xr = x.row(t);
        let yr = y.row_mut(t);
        for (o, yo) in yr.iter_mut().enumerate() {
            *yo = dot(w.row(o), xr);
        }
    }
    y
}

/// Accumulates `dy · w` into `dx`: the input gradient of [`linear`].
pub fn linear_backward_input<T: Scalar>(dy: &Matrix<T>, w: &Matrix<T>, dx: &mut Matrix<T>) {
    debug_assert_eq!(dy.cols, w.rows);
    for t in 0..dy.rows {
        let dyr = dy.row(t);
        let dxr = dx.row_mut(t);
        for (o, &g) in dyr.iter().enumerate() {
            if g != T::zero() {
                axpy(g, w.row(o), dxr);
            }
        }
    }
}

/// Accumulates `dyᵀ · x` into `dw`: the weight gradient of [`linear`].
pub fn linear_backward_weight<T: Scalar>(dy: &Matrix<T>, x: &Matrix<T>, dw: &mut Matrix<T>) {
    debug_assert_eq!(dy.rows, x.rows);
    for t in 0..dy.rows {
        let xr = x.row(t);
        for (o, &g) in dy.row(t).iter().enumerate() {
            if g != T::zero() {
                axpy(g, xr, dw.row_mut(o));
            }
        }
    }
}
