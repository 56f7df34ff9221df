//! Truncated orthogonal basis for standardized functional output.
//!
//! With `Z = U D V^T`, the basis is `B = U D / sqrt(M)` and the weights are
//! `W = sqrt(M) V^T`, both truncated to the leading `p` components, so that
//! `Z ~ B W`, `(1/M) W W^T = I` and `B^T B = diag(d_j^2 / M)`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SVD};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err};
use crate::Result;

/// How many components to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSelector {
    /// Smallest `p` explaining at least this fraction of `||Z||_F^2`.
    MinVarFrac(f64),
    /// Fixed number of components.
    Count(usize),
}

impl Default for BasisSelector {
    fn default() -> Self {
        BasisSelector::MinVarFrac(0.95)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsvdOptions {
    pub oversample: usize,
    pub power_iters: usize,
}

impl Default for RsvdOptions {
    fn default() -> Self {
        Self { oversample: 10, power_iters: 2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisModel {
    /// `d_y x p`.
    pub b: DMatrix<f64>,
    /// `p x M`.
    pub w: DMatrix<f64>,
    /// Singular values of `Z` in decreasing order (all of them for the dense
    /// SVD, the sketch's for the randomized one).
    pub singular_values: Vec<f64>,
    /// Fraction of `||Z||_F^2` captured by the kept components.
    pub var_explained: f64,
}

impl BasisModel {
    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.b.nrows()
    }

    pub fn n_runs(&self) -> usize {
        self.w.ncols()
    }

    /// `B W_any` for any `p x k` weight matrix.
    pub fn reconstruct(&self, w_any: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w_any.nrows() != self.p() {
            return Err(shape_err!("weights have {} rows, basis has {} components", w_any.nrows(), self.p()));
        }
        Ok(&self.b * w_any)
    }

    /// The basis restricted to a subset of functional indices.
    pub fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.p(), |i, j| self.b[(idx[i], j)])
    }
}

/// Cumulative explained-variance fractions `sum_{j<=k} d_j^2 / total`.
pub fn cumulative_var(singular_values: &[f64], total: f64) -> Vec<f64> {
    let mut acc = 0.0;
    singular_values
        .iter()
        .map(|d| {
            acc += d * d;
            acc / total
        })
        .collect()
}

fn check_input(z: &DMatrix<f64>) -> Result<()> {
    if z.is_empty() {
        return Err(arg_err!("empty output matrix"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(arg_err!("output matrix has non-finite entries"));
    }
    Ok(())
}

/// Assembles `B` and `W` from (sorted) left/right singular vectors, flipping
/// each pair so the basis vector's largest-magnitude entry is positive.
fn assemble(u: &DMatrix<f64>, s: &[f64], v_t: &DMatrix<f64>, order: &[usize], p: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let sqrt_m = (m as f64).sqrt();
    let mut b = DMatrix::zeros(u.nrows(), p);
    let mut w = DMatrix::zeros(p, v_t.ncols());
    for (k, &j) in order.iter().take(p).enumerate() {
        let col = u.column(j);
        let imax = col.iamax();
        let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..u.nrows() {
            b[(i, k)] = sign * col[i] * s[j] / sqrt_m;
        }
        for i in 0..v_t.ncols() {
            w[(k, i)] = sign * v_t[(j, i)] * sqrt_m;
        }
    }
    (b, w)
}

fn sorted_order(s: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order
}

/// Dense-SVD basis.
pub fn svd_basis(z_std: &DMatrix<f64>, selector: BasisSelector) -> Result<BasisModel> {
    check_input(z_std)?;
    let (dy, m) = z_std.shape();
    let kmax = dy.min(m);
    let svd = SVD::new(z_std.clone(), true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();
    let order = sorted_order(&raw);
    let sv: Vec<f64> = order.iter().map(|&j| raw[j]).collect();
    let total: f64 = sv.iter().map(|d| d * d).sum();
    if !(total > 0.0) {
        return Err(arg_err!("output matrix is identically zero"));
    }
    let cum = cumulative_var(&sv, total);
    let p = match selector {
        BasisSelector::Count(p) => {
            if p < 1 || p > kmax {
                return Err(arg_err!("basis size {p} outside 1..={kmax}"));
            }
            p
        }
        BasisSelector::MinVarFrac(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(arg_err!("variance fraction {f} outside (0, 1]"));
            }
            // guard the f = 1 case against rounding in the cumulative sum
            cum.iter().position(|&c| c >= f * (1.0 - 1e-12)).map_or(kmax, |k| k + 1)
        }
    };
    let (b, w) = assemble(&u, &raw, &v_t, &order, p, m);
    Ok(BasisModel { b, w, singular_values: sv, var_explained: cum[p - 1].min(1.0) })
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Randomized-SVD basis with `p` components (Gaussian sketch of width
/// `p + oversample`, `power_iters` re-orthonormalized subspace iterations).
pub fn rsvd_basis<R: Rng + ?Sized>(z_std: &DMatrix<f64>, p: usize, opts: RsvdOptions, rng: &mut R) -> Result<BasisModel> {
    check_input(z_std)?;
    let (dy, m) = z_std.shape();
    let k = p + opts.oversample;
    if p < 1 || k > dy.min(m) {
        return Err(arg_err!("p + oversample = {k} must lie in 1..={}", dy.min(m)));
    }
    let omega = DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = orthonormalize(z_std * omega);
    for _ in 0..opts.power_iters {
        let qt = orthonormalize(z_std.transpose() * &q);
        q = orthonormalize(z_std * qt);
    }
    let small = q.transpose() * z_std;
    let svd = SVD::new(small, true, true);
    let u = &q * svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();
    let order = sorted_order(&raw);
    let sv: Vec<f64> = order.iter().map(|&j| raw[j]).collect();
    let total = z_std.norm_squared();
    let cum = cumulative_var(&sv, total);
    let (b, w) = assemble(&u, &raw, &v_t, &order, p, m);
    Ok(BasisModel { b, w, singular_values: sv, var_explained: cum[p - 1].min(1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_for(seed, &[]);
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn rank_one_is_exact_with_one_component() {
        let u = DMatrix::from_column_slice(5, 1, &[1.0, -2.0, 0.5, 3.0, 1.0]);
        let v = DMatrix::from_row_slice(1, 4, &[0.3, -1.0, 2.0, 0.1]);
        let z = &u * &v;
        let bm = svd_basis(&z, BasisSelector::MinVarFrac(0.95)).unwrap();
        assert_eq!(bm.p(), 1);
        assert!((bm.reconstruct(&bm.w).unwrap() - &z).norm() < 1e-12);
        assert!((bm.var_explained - 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_selector_keeps_95_percent() {
        assert_eq!(BasisSelector::default(), BasisSelector::MinVarFrac(0.95));
    }

    #[test]
    fn orthogonality_invariants() {
        for &(r, c) in &[(25, 98), (40, 300), (100, 1058)] {
            let z = random_matrix(r, c, r as u64);
            let bm = svd_basis(&z, BasisSelector::Count(r.min(10))).unwrap();
            let m = c as f64;
            let wwt = &bm.w * bm.w.transpose() / m;
            assert!((wwt - DMatrix::identity(bm.p(), bm.p())).amax() < 1e-8);
            let btb = bm.b.transpose() * &bm.b;
            for i in 0..bm.p() {
                for j in 0..bm.p() {
                    let expect = if i == j { bm.singular_values[i].powi(2) / m } else { 0.0 };
                    assert!((btb[(i, j)] - expect).abs() < 1e-8 * (1.0 + expect));
                }
            }
        }
    }

    #[test]
    fn truncation_error_identity() {
        let z = random_matrix(25, 242, 4);
        let total = z.norm_squared();
        for p in [1, 3, 10, 25] {
            let bm = svd_basis(&z, BasisSelector::Count(p)).unwrap();
            let err = (bm.reconstruct(&bm.w).unwrap() - &z).norm();
            let expect = ((1.0 - bm.var_explained) * total).max(0.0).sqrt();
            assert!((err - expect).abs() < 1e-8, "p={p}: {err} vs {expect}");
        }
    }

    #[test]
    fn var_explained_non_decreasing() {
        let z = random_matrix(12, 30, 8);
        let fr: Vec<f64> = (1..=12).map(|p| svd_basis(&z, BasisSelector::Count(p)).unwrap().var_explained).collect();
        assert!(fr.windows(2).all(|w| w[1] >= w[0]));
        assert!((fr[11] - 1.0).abs() < 1e-12);
        let full = svd_basis(&z, BasisSelector::MinVarFrac(1.0)).unwrap();
        assert_eq!(full.p(), 12);
    }

    #[test]
    fn selector_errors() {
        let z = random_matrix(4, 6, 1);
        assert!(svd_basis(&z, BasisSelector::Count(5)).is_err());
        assert!(svd_basis(&z, BasisSelector::Count(0)).is_err());
        assert!(svd_basis(&z, BasisSelector::MinVarFrac(0.0)).is_err());
        assert!(svd_basis(&DMatrix::zeros(0, 0), BasisSelector::Count(1)).is_err());
        assert!(rsvd_basis(&z, 2, RsvdOptions::default(), &mut rng_for(0, &[])).is_err());
    }

    #[test]
    fn sign_convention() {
        let z = random_matrix(10, 20, 2);
        let bm = svd_basis(&z, BasisSelector::Count(4)).unwrap();
        for j in 0..4 {
            let col = bm.b.column(j);
            assert!(col[col.iamax()] > 0.0);
        }
        let flipped = svd_basis(&(-&z), BasisSelector::Count(4)).unwrap();
        assert!((flipped.b - &bm.b).amax() < 1e-10);
    }

    #[test]
    fn reconstruct_contract() {
        let z = random_matrix(6, 9, 3);
        let bm = svd_basis(&z, BasisSelector::Count(3)).unwrap();
        assert_eq!(bm.reconstruct(&DMatrix::zeros(3, 2)).unwrap(), DMatrix::zeros(6, 2));
        let e1 = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert_eq!(bm.reconstruct(&e1).unwrap().column(0), bm.b.column(1));
        assert!(bm.reconstruct(&DMatrix::zeros(2, 1)).is_err());
        assert_eq!(bm.rows(&[5, 0]).row(1), bm.b.row(0));
    }

    #[test]
    fn rsvd_exact_rank() {
        let a = random_matrix(60, 4, 10);
        let c = random_matrix(4, 200, 11);
        let z = a * c;
        let bm = rsvd_basis(&z, 4, RsvdOptions::default(), &mut rng_for(1, &[])).unwrap();
        assert!((bm.reconstruct(&bm.w).unwrap() - &z).norm() < 1e-8 * z.norm());
        let again = rsvd_basis(&z, 4, RsvdOptions::default(), &mut rng_for(1, &[])).unwrap();
        assert_eq!(bm, again);
        let wwt = &bm.w * bm.w.transpose() / 200.0;
        assert!((wwt - DMatrix::identity(4, 4)).amax() < 1e-8);
    }
}
