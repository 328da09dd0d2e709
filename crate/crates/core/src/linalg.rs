//! Minimal row-major dense matrix and the distance helpers used throughout.
//!
//! Deliberately tiny: the engine needs row access, a few reductions, and
//! squared euclidean distances, all with a fixed left-to-right reduction order
//! so results are reproducible bit for bit.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    /// Builds from row-major data. Panics if the length is not rows*cols.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Mean of all rows; zero vector for an empty matrix.
    pub fn row_mean(&self) -> Vec<S> {
        let mut mean = vec![S::zero(); self.cols];
        if self.rows == 0 {
            return mean;
        }
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += *v;
            }
        }
        let inv = S::one() / S::from_usize(self.rows).unwrap();
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self -= lr * grad`, the only update rule the trainers need.
    pub fn step(&mut self, grad: &Mat<S>, lr: S) {
        debug_assert_eq!(self.data.len(), grad.data.len());
        for (w, g) in self.data.iter_mut().zip(&grad.data) {
            *w = *w - lr * *g;
        }
    }
}

pub fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

pub fn dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    sq_dist(a, b).sqrt()
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Root-mean-square row norm: sqrt(mean_i ||row_i||^2). Used as the scale for
/// normalized centroid movement.
pub fn rms_row_norm<S: Scalar>(m: &Mat<S>) -> S {
    if m.rows() == 0 {
        return S::zero();
    }
    let mut acc = S::zero();
    for r in m.iter_rows() {
        acc += dot(r, r);
    }
    (acc / S::from_usize(m.rows()).unwrap()).sqrt()
}

/// Total variance: mean squared distance of rows to their mean.
pub fn total_variance<S: Scalar>(m: &Mat<S>) -> S {
    if m.rows() == 0 {
        return S::zero();
    }
    let mean = m.row_mean();
    let mut acc = S::zero();
    for r in m.iter_rows() {
        acc += sq_dist(r, &mean);
    }
    acc / S::from_usize(m.rows()).unwrap()
}
