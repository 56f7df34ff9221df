#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use super::Lengthscales;
use crate::error::shape_err;
use crate::Result;

/// Cross-correlation `exp(-sum_k (x1_ik - x2_jk)^2 / l_k)`, `a x b`.
pub fn cross_corr(x1: &DMatrix<f64>, x2: &DMatrix<f64>, l: &Lengthscales) -> Result<DMatrix<f64>> {
    let d = l.len();
    if x1.ncols() != d || x2.ncols() != d {
        return Err(shape_err!("inputs have {} and {} columns, {} lengthscales", x1.ncols(), x2.ncols(), d));
    }
    let inv: Vec<f64> = l.as_slice().iter().map(|v| 1.0 / v).collect();
    Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
        let s: f64 = (0..d).map(|k| (x1[(i, k)] - x2[(j, k)]).powi(2) * inv[k]).sum();
        (-s).exp()
    }))
}

/// Correlation matrix between the rows of `x1` and `x2`. When both are the
/// same design (square, equal), `nugget` is added on the diagonal.
pub fn corr_matrix(x1: &DMatrix<f64>, x2: &DMatrix<f64>, l: &Lengthscales, nugget: f64) -> Result<DMatrix<f64>> {
    if !(nugget >= 0.0) {
        return Err(crate::error::arg_err!("nugget must be non-negative, got {nugget}"));
    }
    let mut c = cross_corr(x1, x2, l)?;
    if x1.shape() == x2.shape() && x1 == x2 {
        for i in 0..c.nrows() {
            c[(i, i)] += nugget;
        }
    }
    Ok(c)
}

/// Isotropic correlation (unit lengthscales) of a scaled design with itself,
/// plus `nugget` on the diagonal.
pub fn scaled_corr(x: &DMatrix<f64>, nugget: f64) -> DMatrix<f64> {
    let (m, d) = x.shape();
    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        c[(i, i)] = 1.0 + nugget;
        for j in 0..i {
            let s: f64 = (0..d).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
            let v = (-s).exp();
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky;
    use crate::rng::rng_for;
    use rand::Rng;

    #[test]
    fn self_pair_and_unit_distance() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let l = Lengthscales::new(alloc::vec![0.5, 2.0]).unwrap();
        let c = corr_matrix(&x, &x, &l, 1e-7).unwrap();
        assert_eq!(c[(0, 0)], 1.0 + 1e-7);
        let y = DMatrix::from_row_slice(1, 2, &[0.3 + 0.5f64.sqrt(), 0.7]);
        let c = corr_matrix(&x, &y, &l, 1e-7).unwrap();
        assert!((c[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn nugget_only_on_square_self_case() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 0.5]);
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 0.6]);
        let l = Lengthscales::ones(1);
        let c = corr_matrix(&x, &y, &l, 0.1).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert!(corr_matrix(&x, &y, &l, -1.0).is_err());
        assert!(corr_matrix(&x, &DMatrix::zeros(1, 2), &l, 0.0).is_err());
    }

    #[test]
    fn random_three_point_matrices_are_spd() {
        let mut rng = rng_for(5, &[]);
        for _ in 0..200 {
            let x = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
            let l = Lengthscales::new(alloc::vec![rng.random::<f64>() + 0.01, rng.random::<f64>() + 0.01]).unwrap();
            let c = corr_matrix(&x, &x, &l, 1e-7).unwrap();
            assert_eq!(c, c.transpose());
            assert!(cholesky(c, "test").is_ok());
        }
    }

    #[test]
    fn scaled_corr_matches_general_form() {
        let mut rng = rng_for(6, &[]);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>());
        let a = scaled_corr(&x, 1e-3);
        let b = corr_matrix(&x, &x, &Lengthscales::ones(3), 1e-3).unwrap();
        assert!((a - b).amax() < 1e-15);
    }
}
