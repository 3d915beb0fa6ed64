//! Forward kernels shared by the tape and by non-differentiable callers.

use super::matrix::{dot, Matrix};
use crate::scalar::Scalar;

/// Softmax within each contiguous segment `offsets[s]..offsets[s + 1]`,
/// stabilised by subtracting the segment maximum. Empty segments produce
/// nothing.
pub fn segment_softmax<T: Scalar>(scores: &[T], offsets: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); scores.len()];
    for w in offsets.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo == hi {
            continue;
        }
        let seg = &scores[lo..hi];
        let max = seg.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (o, &s) in out[lo..hi].iter_mut().zip(seg) {
            *o = (s - max).exp();
            total = total + *o;
        }
        for o in &mut out[lo..hi] {
            *o = *o / total;
        }
    }
    out
}

/// Row `s` of the result is `(1 / |s|) * sum_{i in s} weights[i] * values[i]`;
/// empty segments give a zero row.
pub fn segment_weighted_mean<T: Scalar>(values: &Matrix<T>, weights: &[T], offsets: &[usize]) -> Matrix<T> {
    assert_eq!(values.rows(), weights.len(), "one weight per value row");
    let segments = offsets.len().saturating_sub(1);
    let mut out = Matrix::zeros(segments, values.cols());
    for s in 0..segments {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        if lo == hi {
            continue;
        }
        let inv = T::one() / T::of_usize(hi - lo);
        let row = out.row_mut(s);
        for i in lo..hi {
            let w = weights[i] * inv;
            for (o, &v) in row.iter_mut().zip(values.row(i)) {
                *o = *o + w * v;
            }
        }
    }
    out
}

/// Rationale score of one triplet: `(e_h Wq) . ((e_t Wk) ⊙ e_r) / sqrt(d)`.
pub fn bilinear_attention<T: Scalar>(e_h: &[T], e_r: &[T], e_t: &[T], wq: &Matrix<T>, wk: &Matrix<T>) -> T {
    let d = e_h.len();
    assert!(e_r.len() == d && e_t.len() == d && wq.shape() == (d, d) && wk.shape() == (d, d));
    let q = Matrix::from_vec(1, d, e_h.to_vec()).matmul(wq);
    let k = Matrix::from_vec(1, d, e_t.to_vec()).matmul(wk);
    let acc = q
        .as_slice()
        .iter()
        .zip(k.as_slice())
        .zip(e_r)
        .fold(T::zero(), |acc, ((&q, &k), &r)| acc + q * k * r);
    acc / T::of_usize(d).sqrt()
}

/// Constant sparse matrix in CSR form, used for fixed-coefficient
/// propagation (mean aggregation, symmetric-normalised adjacency).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// `entries` must be grouped by row in ascending row order.
    pub fn from_sorted_entries(rows: usize, cols: usize, entries: impl IntoIterator<Item = (usize, usize, T)>) -> Self {
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut last_row = 0;
        for (r, c, v) in entries {
            assert!(r < rows && c < cols, "sparse entry out of bounds");
            assert!(r >= last_row, "entries must be grouped by ascending row");
            last_row = r;
            offsets[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        SparseMatrix {
            rows,
            cols,
            offsets,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// `self * x`
    pub fn mul_dense(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, x.rows(), "spmm dimension mismatch");
        let mut out = Matrix::zeros(self.rows, x.cols());
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                let src = x.row(c).to_vec();
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o = *o + v * s;
                }
            }
        }
        out
    }

    /// `self^T * g`
    pub fn t_mul_dense(&self, g: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.rows, g.rows(), "spmm transpose dimension mismatch");
        let mut out = Matrix::zeros(self.cols, g.cols());
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                let src = g.row(r);
                let dst = out.row_mut(c);
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o = *o + v * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                m[(r, c)] = m[(r, c)] + v;
            }
        }
        m
    }
}

/// `sum_i a[i] * b[i]` per row pair; exposed for scoring outside the tape.
pub fn row_dots<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Vec<T> {
    assert_eq!(a.shape(), b.shape());
    (0..a.rows()).map(|i| dot(a.row(i), b.row(i))).collect()
}
