//! Basis discrepancy `delta(x) = K v(x)` with one full GP per weight row.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::gp::{cross_corr, nlml_parts, GammaPrior, Lengthscales, PredictiveT, LENGTHSCALE_BOUNDS};
use crate::linalg::{cholesky, Chol};
use crate::optim::{minimize_box, BfgsOptions};
use crate::{Error, Result};

/// Nugget bounds when the nugget is estimated.
pub const NUGGET_BOUNDS: (f64, f64) = (1e-6, 1.0);
/// Mode of the gamma prior on an estimated nugget.
pub const NUGGET_PRIOR_MODE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuggetMode {
    Estimate,
    Fixed(f64),
}

/// User basis `K` (`d_obs x p_delta`) and nugget handling.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancySpec {
    pub k: DMatrix<f64>,
    pub nugget_mode: NuggetMode,
    gram: DMatrix<f64>,
}

impl DiscrepancySpec {
    pub fn new(k: DMatrix<f64>, nugget_mode: NuggetMode) -> Result<Self> {
        let gram = k.tr_mul(&k);
        if k.ncols() > 0 {
            if k.ncols() > k.nrows() {
                return Err(Error::RankDeficient("discrepancy basis has more columns than rows"));
            }
            cholesky(gram.clone(), "discrepancy Gram matrix").map_err(|_| Error::RankDeficient("discrepancy basis"))?;
            // guard against nearly collinear columns the factorization tolerates
            let eig = gram.symmetric_eigenvalues();
            if eig.min() <= 1e-12 * eig.max() {
                return Err(Error::RankDeficient("discrepancy basis"));
            }
        }
        if let NuggetMode::Fixed(g) = nugget_mode {
            if !(g >= 0.0) {
                return Err(crate::error::arg_err!("discrepancy nugget must be non-negative, got {g}"));
            }
        }
        Ok(Self { k, nugget_mode, gram })
    }

    /// Intercept plus slope over `locations` (e.g. the observed distances).
    pub fn linear(locations: &[f64], nugget_mode: NuggetMode) -> Result<Self> {
        let k = DMatrix::from_fn(locations.len(), 2, |i, j| if j == 0 { 1.0 } else { locations[i] });
        Self::new(k, nugget_mode)
    }

    pub fn n_basis(&self) -> usize {
        self.k.ncols()
    }

    /// `V = (K^T K)^-1 K^T R`.
    pub fn project(&self, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if r.nrows() != self.k.nrows() {
            return Err(shape_err!("{} residual rows for a {}-row basis", r.nrows(), self.k.nrows()));
        }
        if self.k.ncols() == 0 {
            return Ok(DMatrix::zeros(0, r.ncols()));
        }
        let chol = cholesky(self.gram.clone(), "discrepancy Gram matrix")?;
        Ok(chol.solve(&self.k.tr_mul(r)))
    }
}

/// Hyperparameters of one discrepancy weight GP.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyHyper {
    pub lengthscales: Lengthscales,
    pub nugget: f64,
}

#[derive(Clone, Debug)]
enum RowGp {
    /// Row is identically zero.
    Zero,
    Fitted { hyper: DiscrepancyHyper, chol: Chol, alpha: DVector<f64>, psi: f64 },
}

#[derive(Clone, Debug)]
pub struct DiscrepancyModel {
    /// `p_delta x n` projected weights.
    pub v: DMatrix<f64>,
    x: DMatrix<f64>,
    rows: Vec<RowGp>,
}

fn fit_row_hyper(x: &DMatrix<f64>, v: &DVector<f64>, mode: NuggetMode) -> Result<DiscrepancyHyper> {
    let d = x.ncols();
    let prior = GammaPrior::from_design(x);
    let nugget_prior = GammaPrior::with_mode(NUGGET_PRIOR_MODE);
    let estimate = matches!(mode, NuggetMode::Estimate);
    let np = d + usize::from(estimate);
    let mut lo = vec![LENGTHSCALE_BOUNDS.0.ln(); np];
    let mut hi = vec![LENGTHSCALE_BOUNDS.1.ln(); np];
    if estimate {
        lo[d] = NUGGET_BOUNDS.0.ln();
        hi[d] = NUGGET_BOUNDS.1.ln();
    }
    let objective = |u: &[f64]| -> Option<(f64, Vec<f64>)> {
        let l: Vec<f64> = u[..d].iter().map(|s| s.exp()).collect();
        let g = match mode {
            NuggetMode::Estimate => u[d].exp(),
            NuggetMode::Fixed(g) => g,
        };
        let parts = nlml_parts(x, v, &l, g, true).ok()?;
        let mut f = parts.value;
        let mut grad = Vec::with_capacity(np);
        for k in 0..d {
            f -= prior.ln_pdf(l[k]);
            grad.push(l[k] * (parts.d_lengthscales[k] - prior.d_ln_pdf(l[k])));
        }
        if estimate {
            f -= nugget_prior.ln_pdf(g);
            grad.push(g * (parts.d_nugget - nugget_prior.d_ln_pdf(g)));
        }
        Some((f, grad))
    };
    let centre = prior.mode().ln();
    let starts: [(f64, f64); 2] = [(0.0, NUGGET_PRIOR_MODE.ln()), (1.0, 0.01f64.ln())];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (shift, g0) in starts {
        let mut u0 = vec![centre + shift; d];
        if estimate {
            u0.push(g0);
        }
        if let Some(min) = minimize_box(objective, &u0, &lo, &hi, BfgsOptions::default()) {
            if best.as_ref().is_none_or(|b| min.f < b.0) {
                best = Some((min.f, min.x));
            }
        }
    }
    let (_, u) = best.ok_or(Error::EstimationFailed(starts.len()))?;
    Ok(DiscrepancyHyper {
        lengthscales: Lengthscales::new(u[..d].iter().map(|s| s.exp()).collect())?,
        nugget: match mode {
            NuggetMode::Estimate => u[d].exp(),
            NuggetMode::Fixed(g) => g,
        },
    })
}

fn condition(x: &DMatrix<f64>, v: &DVector<f64>, hyper: DiscrepancyHyper) -> Result<RowGp> {
    let c = crate::gp::corr_matrix(x, x, &hyper.lengthscales, hyper.nugget)?;
    let chol = cholesky(c, "discrepancy correlation matrix")?;
    let alpha = chol.solve(v);
    let psi = v.dot(&alpha);
    Ok(RowGp::Fitted { hyper, chol, alpha, psi })
}

fn is_zero(v: &DVector<f64>) -> bool {
    v.iter().all(|e| e.abs() <= f64::MIN_POSITIVE)
}

/// Projects the residuals onto `K` and fits one GP per weight row on the
/// field inputs `x_f` (`n x d_x`), with MAP lengthscales and nugget.
/// Deterministic: the optimizer uses fixed starts.
pub fn fit_discrepancy(r: &DMatrix<f64>, spec: &DiscrepancySpec, x_f: &DMatrix<f64>) -> Result<DiscrepancyModel> {
    fit_with(r, spec, x_f, None)
}

/// As [`fit_discrepancy`] but reusing given hyperparameters (one per row).
pub fn refit_discrepancy(
    r: &DMatrix<f64>,
    spec: &DiscrepancySpec,
    x_f: &DMatrix<f64>,
    hyper: &[Option<DiscrepancyHyper>],
) -> Result<DiscrepancyModel> {
    fit_with(r, spec, x_f, Some(hyper))
}

fn fit_with(
    r: &DMatrix<f64>,
    spec: &DiscrepancySpec,
    x_f: &DMatrix<f64>,
    hyper: Option<&[Option<DiscrepancyHyper>]>,
) -> Result<DiscrepancyModel> {
    if x_f.nrows() != r.ncols() {
        return Err(shape_err!("{} field inputs for {} residual columns", x_f.nrows(), r.ncols()));
    }
    let v = spec.project(r)?;
    if v.nrows() > 0 && r.ncols() < 2 {
        return Err(crate::error::arg_err!("discrepancy needs at least 2 field points"));
    }
    let mut rows = Vec::with_capacity(v.nrows());
    for j in 0..v.nrows() {
        let vj = v.row(j).transpose();
        if is_zero(&vj) {
            rows.push(RowGp::Zero);
            continue;
        }
        let h = match hyper.and_then(|h| h.get(j).cloned().flatten()) {
            Some(h) => h,
            None => fit_row_hyper(x_f, &vj, spec.nugget_mode)?,
        };
        rows.push(condition(x_f, &vj, h)?);
    }
    Ok(DiscrepancyModel { v, x: x_f.clone(), rows })
}

impl DiscrepancyModel {
    pub fn n_basis(&self) -> usize {
        self.rows.len()
    }

    /// Fitted hyperparameters per row (`None` for identically zero rows).
    pub fn hyper(&self) -> Vec<Option<DiscrepancyHyper>> {
        self.rows
            .iter()
            .map(|r| match r {
                RowGp::Zero => None,
                RowGp::Fitted { hyper, .. } => Some(hyper.clone()),
            })
            .collect()
    }

    /// Student-t predictive law of each weight at `x` (`n` degrees of
    /// freedom). The nugget is left out of the predictive scale.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<PredictiveT>> {
        if x.len() != self.x.ncols() {
            return Err(shape_err!("input of length {} for a {}-input discrepancy", x.len(), self.x.ncols()));
        }
        let n = self.x.nrows();
        let q = DMatrix::from_row_slice(1, x.len(), x);
        self.rows
            .iter()
            .map(|row| match row {
                RowGp::Zero => Ok(PredictiveT { mean: 0.0, scale2: 0.0, df: n.max(1) }),
                RowGp::Fitted { hyper, chol, alpha, psi } => {
                    let c = cross_corr(&self.x, &q, &hyper.lengthscales)?.column(0).into_owned();
                    let mean = c.dot(alpha);
                    let mut s = c;
                    chol.l_dirty().solve_lower_triangular_mut(&mut s);
                    let scale2 = (psi / n as f64 * (1.0 - s.norm_squared())).max(0.0);
                    Ok(PredictiveT { mean, scale2, df: n })
                }
            })
            .collect()
    }

    /// Predictive mean of `delta` at `x` given the basis.
    pub fn mean_delta(&self, spec: &DiscrepancySpec, x: &[f64]) -> Result<DVector<f64>> {
        let p = self.predict(x)?;
        let m = DVector::from_iterator(p.len(), p.iter().map(|t| t.mean));
        Ok(&spec.k * m)
    }
}
