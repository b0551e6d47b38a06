//! Dense 2-D matrix substrate: row-major `f64` storage, elementwise ops,
//! reductions, and the stable nonlinearities the model layers need.
//!
//! The crate deliberately owns this layer instead of pulling in a linear
//! algebra dependency; everything downstream (layers, pooling, metrics)
//! is expressed in terms of these few primitives.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Axis selector for reductions. `Rows` collapses the row dimension
/// (yielding a `1 x cols` result), `Cols` collapses the column dimension
/// (yielding a `rows x 1` result).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {rows}x{cols}: both dimensions must be at least 1")]
    InvalidShape { rows: usize, cols: usize },
    #[error("data length {got} does not match shape {rows}x{cols} ({} expected)", rows * cols)]
    DataLength { rows: usize, cols: usize, got: usize },
    #[error("shape mismatch: {left_rows}x{left_cols} is incompatible with {right_rows}x{right_cols} for {op}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
}

/// Dense row-major matrix of `f64`.
///
/// Both dimensions are at least 1 by construction, so reductions are total.
/// Values are immutable through the public API once a matrix is returned;
/// all operations allocate their result.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be at least 1");
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows < 1 || cols < 1 {
            return Err(TensorError::InvalidShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(TensorError::DataLength { rows, cols, got: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(TensorError::InvalidShape { rows: rows.len(), cols: 0 });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::DataLength { rows: rows.len(), cols, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    /// 1 x n row vector.
    pub fn row_vector(values: &[f64]) -> Result<Self, TensorError> {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Matrix product. `self.cols` must equal `rhs.rows`.
    ///
    /// Sequential i-k-j loop order; results are bit-identical run to run.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != rhs.rows {
            return Err(self.shape_err("matmul", rhs));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = rhs.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    fn shape_err(&self, op: &'static str, rhs: &Matrix) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: rhs.rows,
            right_cols: rhs.cols,
        }
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(self.shape_err(op, rhs));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: f64) -> Matrix {
        self.map(|v| v + s)
    }

    /// Elementwise `max(v, s)`.
    pub fn max_scalar(&self, s: f64) -> Matrix {
        self.map(|v| v.max(s))
    }

    /// Adds a `1 x cols` bias row to every row of the matrix. The only
    /// broadcast the substrate supports besides scalars.
    pub fn add_row_bias(&self, bias: &Matrix) -> Result<Matrix, TensorError> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(self.shape_err("add_row_bias", bias));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Logistic sigmoid, computed branch-wise so large magnitudes saturate
    /// to 0 or 1 instead of overflowing.
    pub fn sigmoid(&self) -> Matrix {
        self.map(sigmoid_scalar)
    }

    pub fn relu(&self) -> Matrix {
        self.map(|v| v.max(0.0))
    }

    pub fn exp(&self) -> Matrix {
        self.map(f64::exp)
    }

    /// Natural log with the argument floored at 1e-12, so saturated
    /// probabilities never produce -inf in a loss.
    pub fn log_clamped(&self) -> Matrix {
        self.map(|v| v.max(1e-12).ln())
    }

    /// Reduction along an axis. `Rows` yields `1 x cols`, `Cols` yields
    /// `rows x 1`. Never fails: matrices are non-empty by construction.
    pub fn sum_axis(&self, axis: Axis) -> Matrix {
        match axis {
            Axis::Rows => {
                let mut out = Matrix::zeros(1, self.cols);
                for r in 0..self.rows {
                    for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                        *o += v;
                    }
                }
                out
            }
            Axis::Cols => {
                let mut out = Matrix::zeros(self.rows, 1);
                for r in 0..self.rows {
                    out.data[r] = self.row(r).iter().sum();
                }
                out
            }
        }
    }

    pub fn mean_axis(&self, axis: Axis) -> Matrix {
        let n = match axis {
            Axis::Rows => self.rows,
            Axis::Cols => self.cols,
        };
        self.sum_axis(axis).scale(1.0 / n as f64)
    }

    pub fn max_axis(&self, axis: Axis) -> Matrix {
        match axis {
            Axis::Rows => {
                let mut out = Matrix::from_vec(1, self.cols, self.row(0).to_vec()).unwrap();
                for r in 1..self.rows {
                    for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
                out
            }
            Axis::Cols => {
                let mut out = Matrix::zeros(self.rows, 1);
                for r in 0..self.rows {
                    out.data[r] = self.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
                out
            }
        }
    }

    /// Index of the maximum along an axis, as `f64` entries. Ties break to
    /// the lowest index.
    pub fn argmax_axis(&self, axis: Axis) -> Matrix {
        match axis {
            Axis::Rows => {
                let mut out = Matrix::zeros(1, self.cols);
                for c in 0..self.cols {
                    let mut best = 0usize;
                    for r in 1..self.rows {
                        if self[(r, c)] > self[(best, c)] {
                            best = r;
                        }
                    }
                    out.data[c] = best as f64;
                }
                out
            }
            Axis::Cols => {
                let mut out = Matrix::zeros(self.rows, 1);
                for r in 0..self.rows {
                    let row = self.row(r);
                    let mut best = 0usize;
                    for (c, &v) in row.iter().enumerate().skip(1) {
                        if v > row[best] {
                            best = c;
                        }
                    }
                    out.data[r] = best as f64;
                }
                out
            }
        }
    }

    /// Row-wise softmax with max-subtraction, so entries of magnitude 1e3
    /// neither overflow nor collapse a row's sum away from 1. Outputs lie
    /// in [0, 1] (an entry underflows to exactly 0 only when it trails the
    /// row maximum by more than ~745).
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> Result<f64, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(self.shape_err("max_abs_diff", rhs));
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let id = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(a.matmul(&id).unwrap(), a);
    }

    #[test]
    fn matmul_dot_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert_eq!(c[(0, 0)], 11.0);
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = Rng::new(7);
        let a = rng.normal(5, 7, 0.0, 1.0);
        let b = rng.normal(7, 3, 0.0, 1.0);
        let fast = a.matmul(&b).unwrap();
        let naive = matmul_naive(&a, &b);
        assert!(fast.max_abs_diff(&naive).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_dimension_mismatch_names_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "message should name both shapes: {msg}");
    }

    #[test]
    fn sigmoid_known_values() {
        let m = Matrix::row_vector(&[0.0, 2.0]).unwrap();
        let s = m.sigmoid();
        assert_eq!(s[(0, 0)], 0.5);
        // 1/(1+e^-2) evaluated with extended precision.
        assert!((s[(0, 1)] - 0.88079707797788244).abs() < 1e-15);
    }

    #[test]
    fn relu_definition() {
        let m = Matrix::row_vector(&[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(m.relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn reduce_sum_rows() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = m.sum_axis(Axis::Rows);
        assert_eq!(s.shape(), (1, 2));
        assert_eq!(s.data(), &[4.0, 6.0]);
    }

    #[test]
    fn reduce_max_cols() {
        let m = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 4.0]]).unwrap();
        let s = m.max_axis(Axis::Cols);
        assert_eq!(s.shape(), (2, 1));
        assert_eq!(s.data(), &[5.0, 4.0]);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let m = Matrix::from_rows(&[vec![2.0, 2.0]]).unwrap();
        assert_eq!(m.argmax_axis(Axis::Cols).data(), &[0.0]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let m = Matrix::row_vector(&[0.0, 0.0, 0.0]).unwrap();
        let s = m.softmax_rows();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_stable_on_large_logits() {
        let m = Matrix::row_vector(&[1000.0, 0.0]).unwrap();
        let s = m.softmax_rows();
        assert!(s.is_finite());
        assert!(s[(0, 0)] > 1.0 - 1e-12);
        assert!(s[(0, 1)] < 1e-12);
    }

    #[test]
    fn softmax_known_values() {
        // softmax(1,2,3) evaluated with extended precision.
        let m = Matrix::row_vector(&[1.0, 2.0, 3.0]).unwrap();
        let s = m.softmax_rows();
        let expect = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (got, want) in s.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = Rng::new(11);
        for _ in 0..5 {
            let a = rng.normal(4, 6, 0.0, 1.0);
            let b = rng.normal(6, 3, 0.0, 1.0);
            let c = rng.normal(3, 5, 0.0, 1.0);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Matrix::from_vec(0, 3, vec![]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(Matrix::from_rows(&[]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(values in proptest::collection::vec(-1e3..1e3f64, 1..24)) {
            let m = Matrix::row_vector(&values).unwrap();
            let s = m.softmax_rows();
            let total: f64 = s.data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn relu_and_sigmoid_monotone(xs in proptest::collection::vec(-50.0..50.0f64, 1..16),
                                     bumps in proptest::collection::vec(0.0..10.0f64, 1..16)) {
            let n = xs.len().min(bumps.len());
            let lo = Matrix::row_vector(&xs[..n]).unwrap();
            let hi_vals: Vec<f64> = xs[..n].iter().zip(&bumps[..n]).map(|(x, b)| x + b).collect();
            let hi = Matrix::row_vector(&hi_vals).unwrap();
            for (a, b) in lo.relu().data().iter().zip(hi.relu().data()) {
                prop_assert!(a <= b);
            }
            for (a, b) in lo.sigmoid().data().iter().zip(hi.sigmoid().data()) {
                prop_assert!(a <= b);
            }
        }
    }
}
