//! Integrated likelihood of a zero-mean GP with the process variance
//! marginalized under a reference prior:
//!
//! `-log L(l, g) = (m/2) log(w^T C^-1 w) + (1/2) log|C| + const`,
//! `C = K(l) + g I`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Lengthscales;
use crate::error::{arg_err, shape_err};
use crate::linalg::{cholesky, log_det, pairwise_sq_dists, quantile};
use crate::{Error, Result};

/// Gamma(shape, rate) prior on a lengthscale or nugget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const SHAPE: f64 = 1.5;

    /// Prior with shape 3/2 whose mode is `mode`.
    pub fn with_mode(mode: f64) -> Self {
        Self { shape: Self::SHAPE, rate: (Self::SHAPE - 1.0) / mode }
    }

    /// Data-driven lengthscale prior: mode at the 10th percentile of the
    /// squared pairwise distances of the design.
    pub fn from_design(x: &DMatrix<f64>) -> Self {
        let d2 = pairwise_sq_dists(x);
        let q = if d2.is_empty() { 0.0 } else { quantile(&d2, 0.1) };
        let mode = if q > 1e-8 { q } else { 1e-2 };
        Self::with_mode(mode)
    }

    pub fn mode(&self) -> f64 {
        (self.shape - 1.0) / self.rate
    }

    pub fn ln_pdf(&self, v: f64) -> f64 {
        self.shape * self.rate.ln() - libm::lgamma(self.shape) + (self.shape - 1.0) * v.ln() - self.rate * v
    }

    pub fn d_ln_pdf(&self, v: f64) -> f64 {
        (self.shape - 1.0) / v - self.rate
    }
}

/// Data part of the objective and its partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct NlmlParts {
    /// `(m/2) log psi + (1/2) log|C|`.
    pub value: f64,
    /// Derivatives with respect to each lengthscale.
    pub d_lengthscales: Vec<f64>,
    /// Derivative with respect to the nugget.
    pub d_nugget: f64,
    pub psi: f64,
}

fn check(x: &DMatrix<f64>, w: &DVector<f64>, l: &[f64]) -> Result<()> {
    if x.nrows() != w.len() {
        return Err(shape_err!("{} design rows but {} responses", x.nrows(), w.len()));
    }
    if x.ncols() != l.len() {
        return Err(shape_err!("{} design columns but {} lengthscales", x.ncols(), l.len()));
    }
    if x.nrows() < 2 {
        return Err(arg_err!("likelihood needs at least 2 points"));
    }
    Ok(())
}

/// Evaluates the data term and (optionally) its gradient.
pub(crate) fn nlml_parts(x: &DMatrix<f64>, w: &DVector<f64>, l: &[f64], nugget: f64, grad: bool) -> Result<NlmlParts> {
    check(x, w, l)?;
    let (m, d) = x.shape();
    let inv: Vec<f64> = l.iter().map(|v| 1.0 / v).collect();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let s: f64 = (0..d).map(|c| (x[(i, c)] - x[(j, c)]).powi(2) * inv[c]).sum();
            let v = (-s).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let mut c = k.clone();
    for i in 0..m {
        c[(i, i)] += nugget;
    }
    let chol = cholesky(c, "GP correlation matrix")?;
    let alpha = chol.solve(w);
    let psi = w.dot(&alpha);
    if !(psi > 0.0) || !psi.is_finite() {
        return Err(Error::DegenerateOutput("response vector has zero norm under the GP"));
    }
    let value = 0.5 * m as f64 * psi.ln() + 0.5 * log_det(&chol);
    if !grad {
        return Ok(NlmlParts { value, d_lengthscales: Vec::new(), d_nugget: 0.0, psi });
    }
    // dF/dtheta = 1/2 sum_ij (Cinv_ij - (m/psi) a_i a_j) dC_ij
    let cinv = chol.inverse();
    let scale = m as f64 / psi;
    let mut g = vec![0.0; d];
    let mut trace_term = 0.0;
    for i in 0..m {
        trace_term += cinv[(i, i)] - scale * alpha[i] * alpha[i];
        for j in 0..i {
            let mij = 2.0 * (cinv[(i, j)] - scale * alpha[i] * alpha[j]) * k[(i, j)];
            for (c, gc) in g.iter_mut().enumerate() {
                *gc += mij * (x[(i, c)] - x[(j, c)]).powi(2);
            }
        }
    }
    for (gc, v) in g.iter_mut().zip(l) {
        *gc *= 0.5 / (v * v);
    }
    Ok(NlmlParts { value, d_lengthscales: g, d_nugget: 0.5 * trace_term, psi })
}

fn check_priors(l: &Lengthscales, prior: &[GammaPrior]) -> Result<()> {
    if prior.len() != l.len() {
        return Err(shape_err!("{} priors for {} lengthscales", prior.len(), l.len()));
    }
    Ok(())
}

/// Negative log posterior of the lengthscales (up to a constant):
/// `(m/2) log(w^T C^-1 w) + (1/2) log|C| - sum_k log Gamma(l_k)`.
pub fn neg_log_marginal(
    l: &Lengthscales,
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    nugget: f64,
    prior: &[GammaPrior],
) -> Result<f64> {
    check_priors(l, prior)?;
    let parts = nlml_parts(x, w, l.as_slice(), nugget, false)?;
    let lp: f64 = l.as_slice().iter().zip(prior).map(|(v, p)| p.ln_pdf(*v)).sum();
    Ok(parts.value - lp)
}

/// [`neg_log_marginal`] and its gradient with respect to `l`.
pub fn neg_log_marginal_grad(
    l: &Lengthscales,
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    nugget: f64,
    prior: &[GammaPrior],
) -> Result<(f64, Vec<f64>)> {
    check_priors(l, prior)?;
    let parts = nlml_parts(x, w, l.as_slice(), nugget, true)?;
    let mut value = parts.value;
    let mut grad = parts.d_lengthscales;
    for ((v, p), g) in l.as_slice().iter().zip(prior).zip(grad.iter_mut()) {
        value -= p.ln_pdf(*v);
        *g -= p.d_ln_pdf(*v);
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn flat() -> GammaPrior {
        // shape 1, rate 0: constant log density
        GammaPrior { shape: 1.0, rate: 1e-300 }
    }

    #[test]
    fn two_point_hand_algebra() {
        // C = [[1+g, r], [r, 1+g]], r = exp(-(0.3)^2 / 0.2)
        let x = DMatrix::from_row_slice(2, 1, &[0.1, 0.4]);
        let w = DVector::from_vec(vec![1.0, -0.5]);
        let g = 1e-3;
        let l = Lengthscales::new(vec![0.2]).unwrap();
        let r = (-(0.09f64) / 0.2).exp();
        let a = 1.0 + g;
        let det = a * a - r * r;
        let psi = (a * 1.0 + a * 0.25 - 2.0 * r * (1.0 * -0.5)) / det;
        let expect = psi.ln() + 0.5 * det.ln();
        let prior = [flat()];
        let got = neg_log_marginal(&l, &x, &w, g, &prior).unwrap() + prior[0].ln_pdf(0.2);
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    fn random_problem(seed: u64, m: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = rng_for(seed, &[]);
        let x = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>());
        let w = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
        (x, w)
    }

    #[test]
    fn scaling_weights_shifts_by_m_log_k() {
        let (x, w) = random_problem(1, 12, 2);
        let l = Lengthscales::new(vec![0.3, 0.7]).unwrap();
        let p = [GammaPrior::with_mode(0.1); 2];
        let a = neg_log_marginal(&l, &x, &w, 1e-6, &p).unwrap();
        let b = neg_log_marginal(&l, &x, &(&w * 3.0), 1e-6, &p).unwrap();
        assert!((b - a - 12.0 * 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn invariant_to_joint_row_permutation() {
        let (x, w) = random_problem(2, 10, 3);
        let perm = [3, 7, 1, 0, 9, 2, 8, 4, 6, 5];
        let xp = DMatrix::from_fn(10, 3, |i, j| x[(perm[i], j)]);
        let wp = DVector::from_fn(10, |i, _| w[perm[i]]);
        let l = Lengthscales::new(vec![0.2, 0.5, 2.0]).unwrap();
        let p = [GammaPrior::with_mode(0.1); 3];
        let a = neg_log_marginal(&l, &x, &w, 1e-6, &p).unwrap();
        let b = neg_log_marginal(&l, &xp, &wp, 1e-6, &p).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rng_for(3, &[]);
        for seed in 0..10 {
            let (x, w) = random_problem(10 + seed, 15, 3);
            let l: Vec<f64> = (0..3).map(|_| 0.05 + rng.random::<f64>()).collect();
            let p = [GammaPrior::with_mode(0.2); 3];
            let (_, g) = neg_log_marginal_grad(&Lengthscales::new(l.clone()).unwrap(), &x, &w, 1e-4, &p).unwrap();
            for k in 0..3 {
                let h = 1e-6 * l[k];
                let mut lp = l.clone();
                lp[k] += h;
                let mut lm = l.clone();
                lm[k] -= h;
                let fp = neg_log_marginal(&Lengthscales::new(lp).unwrap(), &x, &w, 1e-4, &p).unwrap();
                let fm = neg_log_marginal(&Lengthscales::new(lm).unwrap(), &x, &w, 1e-4, &p).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "k={k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn nugget_derivative_matches_central_differences() {
        let (x, w) = random_problem(4, 12, 2);
        let l = [0.3, 0.4];
        let g = 0.05;
        let parts = nlml_parts(&x, &w, &l, g, true).unwrap();
        let h = 1e-7;
        let fp = nlml_parts(&x, &w, &l, g + h, false).unwrap().value;
        let fm = nlml_parts(&x, &w, &l, g - h, false).unwrap().value;
        assert!(((fp - fm) / (2.0 * h) - parts.d_nugget).abs() < 1e-5 * parts.d_nugget.abs().max(1.0));
    }

    #[test]
    fn errors() {
        let (x, w) = random_problem(5, 5, 2);
        let l = Lengthscales::new(vec![0.3, 0.4]).unwrap();
        let p = [GammaPrior::with_mode(0.1); 2];
        assert!(neg_log_marginal(&l, &x, &DVector::zeros(5), 1e-6, &p).is_err());
        assert!(neg_log_marginal(&l, &x, &w, 1e-6, &p[..1]).is_err());
        let dup = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let r = neg_log_marginal(&l, &dup, &DVector::from_vec(vec![1.0, 2.0]), 0.0, &p);
        assert_eq!(r.unwrap_err(), Error::NotPositiveDefinite("GP correlation matrix"));
        assert!(Lengthscales::new(vec![0.0]).is_err());
    }

    #[test]
    fn prior_mode_from_design() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.1, 0.3]);
        // squared distances 0.01, 0.04, 0.09 -> 10th percentile 0.016
        let p = GammaPrior::from_design(&x);
        assert!((p.mode() - 0.016).abs() < 1e-12);
        assert_eq!(p.shape, 1.5);
    }
}
