//! Small dense linear-algebra and order-statistic helpers shared by the modules.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: DMatrix<f64>, what: &'static str) -> Result<Chol> {
    a.cholesky().ok_or(Error::NotPositiveDefinite(what))
}

/// `log |A|` from the Cholesky factor of `A`.
pub fn log_det(chol: &Chol) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Solves `L x = b` for the lower factor of `chol`.
pub fn solve_lower(chol: &Chol, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut x);
    x
}

pub fn row_vec(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Squared Euclidean distances between all distinct row pairs.
pub fn pairwise_sq_dists(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row_vec(x, i)).collect();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(sq_dist(&rows[i], &rows[j]));
        }
    }
    out
}

/// Rows of `x` selected by `idx`, in that order.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// Linear-interpolation quantile (type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sort_floats(v: &mut [f64]) {
    v.sort_by(|a, b| a.total_cmp(b));
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    sort_floats(&mut v);
    quantile_sorted(&v, q)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample covariance (divisor `n - 1`) of the rows of `x`.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mu = x.row_mean();
    let mut centered = x.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mu;
    }
    (centered.transpose() * centered) / (n.max(2) - 1) as f64
}
