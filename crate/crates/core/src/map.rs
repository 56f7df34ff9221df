//! Deterministic MAP calibration with Normal-approximated emulator (and
//! discrepancy) predictions and a rank-reduced Gaussian likelihood.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProblem;
use crate::discrepancy::fit_discrepancy;
use crate::emulator::WeightEmulator;
use crate::error::{arg_err, shape_err};
use crate::gp::PredictiveT;
use crate::linalg::{cholesky, log_det};
use crate::optim::{pattern_search_max, PatternSearchOptions};
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Restarts used by [`map_optimize`] unless told otherwise.
pub const DEFAULT_RESTARTS: usize = 7;
/// Search range of `sigma2` (standardized units).
pub const SIGMA2_BOUNDS: (f64, f64) = (1e-8, 1e2);

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Normal approximation of the predictive laws at one field point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub m_w: Vec<f64>,
    pub s_w: Vec<f64>,
    pub m_v: Option<Vec<f64>>,
    pub s_v: Option<Vec<f64>>,
}

/// Mean and variance `scale2 * df / (df - 2)` of each law.
pub fn normal_moments(laws: &[PredictiveT]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut means = Vec::with_capacity(laws.len());
    let mut vars = Vec::with_capacity(laws.len());
    for l in laws {
        let v = l.variance().ok_or_else(|| arg_err!("a t law with {} degrees of freedom has no variance", l.df))?;
        means.push(l.mean);
        vars.push(v);
    }
    Ok((means, vars))
}

/// Normal summary of the emulator weights at the full input `x`.
pub fn normal_summary(emulator: &dyn WeightEmulator, x: &[f64], m_c: usize) -> Result<GaussianSummary> {
    if m_c < 3 {
        return Err(arg_err!("the Normal approximation needs at least 3 neighbours, got {m_c}"));
    }
    let (m_w, s_w) = normal_moments(&emulator.predict_weights(x, m_c)?)?;
    Ok(GaussianSummary { m_w, s_w, m_v: None, s_v: None })
}

/// Log density of `r ~ N(0, sigma2 I + C diag(s) C^T)` through the `q x q`
/// identity
/// `-1/2 [(d-q) ln sigma2 + ln|G| + (r'r - r'C gamma) / sigma2]
///  + ln N(gamma; 0, diag(s) + sigma2 G^-1) - (d-q)/2 ln 2pi`,
/// with `G = C'C` and `gamma = G^-1 C'r`. Cost `O(d q^2 + q^3)`.
pub fn loglik_rank_reduced(r: &DVector<f64>, c: &DMatrix<f64>, s: &[f64], sigma2: f64) -> Result<f64> {
    let (d, q) = c.shape();
    if r.len() != d || s.len() != q {
        return Err(shape_err!("residual {}, basis {d}x{q}, {} variances", r.len(), s.len()));
    }
    if q > d {
        return Err(Error::RankDeficient("more basis columns than outputs"));
    }
    if !(sigma2 > 0.0) {
        return Err(arg_err!("sigma2 must be positive, got {sigma2}"));
    }
    if let Some(v) = s.iter().find(|v| !(**v >= 0.0)) {
        return Err(arg_err!("negative variance {v}"));
    }
    let rr = r.norm_squared();
    if q == 0 {
        return Ok(-0.5 * (d as f64 * sigma2.ln() + rr / sigma2) - 0.5 * d as f64 * LN_2PI);
    }
    let g = c.tr_mul(c);
    let ctr = c.tr_mul(r);
    let gch = cholesky(g, "basis Gram matrix").map_err(|_| Error::RankDeficient("basis"))?;
    let gamma = gch.solve(&ctr);
    let resid = (rr - ctr.dot(&gamma)).max(0.0);
    let mut cov = gch.inverse() * sigma2;
    for k in 0..q {
        cov[(k, k)] += s[k];
    }
    let cch = cholesky(cov, "reduced covariance")?;
    let quad = gamma.dot(&cch.solve(&gamma));
    let ln_n = -0.5 * (q as f64 * LN_2PI + log_det(&cch) + quad);
    let dq = (d - q) as f64;
    Ok(-0.5 * (dq * sigma2.ln() + log_det(&gch) + resid / sigma2) + ln_n - 0.5 * dq * LN_2PI)
}

/// Deterministic log posterior used for MAP estimation.
pub fn map_objective(problem: &CalibrationProblem<'_>, t: &[f64], sigma2: f64) -> Result<f64> {
    if t.len() != problem.t_dim || t.iter().any(|v| !(0.0..=1.0).contains(v)) || !(sigma2 > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let n = problem.n_field();
    let mut summaries = Vec::with_capacity(n);
    let mut r = problem.y_field.clone();
    for i in 0..n {
        let x: Vec<f64> = problem.x_field.row(i).iter().copied().collect();
        let s = normal_summary(problem.emulator, &problem.joint_input(&x, t), problem.m_c)?;
        let fit = &problem.b_obs * DVector::from_column_slice(&s.m_w);
        for k in 0..r.nrows() {
            r[(k, i)] -= fit[k];
        }
        summaries.push(s);
    }
    let mut c = problem.b_obs.clone();
    if let Some(spec) = problem.discrepancy.as_ref().filter(|s| s.n_basis() > 0) {
        let model = fit_discrepancy(&r, spec, &problem.x_field)?;
        for (i, s) in summaries.iter_mut().enumerate() {
            let x: Vec<f64> = problem.x_field.row(i).iter().copied().collect();
            let laws = model.predict(&x)?;
            let means: Vec<f64> = laws.iter().map(|l| l.mean).collect();
            let vars: Vec<f64> = laws.iter().map(|l| l.variance().unwrap_or(l.scale2)).collect();
            let delta = &spec.k * DVector::from_column_slice(&means);
            for k in 0..r.nrows() {
                r[(k, i)] -= delta[k];
            }
            s.m_v = Some(means);
            s.s_v = Some(vars);
        }
        let p = c.ncols();
        c = c.insert_columns(p, spec.n_basis(), 0.0);
        c.columns_mut(p, spec.n_basis()).copy_from(&spec.k);
    }
    let mut total = problem.sigma_prior.ln_pdf(sigma2);
    for (i, s) in summaries.iter().enumerate() {
        let mut var = s.s_w.clone();
        if let Some(sv) = &s.s_v {
            var.extend_from_slice(sv);
        }
        total += loglik_rank_reduced(&r.column(i).into_owned(), &c, &var, sigma2)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub start_theta: Vec<f64>,
    pub start_sigma2: f64,
    pub start_value: f64,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub value: f64,
    pub evals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub value: f64,
    pub restarts: Vec<RestartTrace>,
}

fn to_params(u: &[f64], dt: usize) -> (Vec<f64>, f64) {
    let (lo, hi) = (SIGMA2_BOUNDS.0.ln(), SIGMA2_BOUNDS.1.ln());
    (u[..dt].to_vec(), (lo + u[dt] * (hi - lo)).exp())
}

/// Best of `restarts` pattern searches from random points of the unit box
/// over `(theta, ln sigma2)`, the latter mapped linearly onto
/// [`SIGMA2_BOUNDS`]. Numerical failures count as `-inf`.
pub fn map_optimize(problem: &CalibrationProblem<'_>, restarts: usize, seed: u64) -> Result<MapResult> {
    if restarts == 0 {
        return Err(arg_err!("at least one restart is required"));
    }
    let dt = problem.t_dim;
    let eval = |u: &[f64]| {
        let (t, s2) = to_params(u, dt);
        map_objective(problem, &t, s2).unwrap_or(f64::NEG_INFINITY)
    };
    let (lo, hi) = (vec![0.0; dt + 1], vec![1.0; dt + 1]);
    let mut traces = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut rng = rng_for(seed, &[stream::MAP, r as u64]);
        let u0: Vec<f64> = (0..=dt).map(|_| rng.random::<f64>()).collect();
        let start_value = eval(&u0);
        let res = pattern_search_max(eval, &u0, &lo, &hi, PatternSearchOptions::default());
        let (st, ss) = to_params(&u0, dt);
        let (t, s2) = to_params(&res.x, dt);
        traces.push(RestartTrace {
            start_theta: st,
            start_sigma2: ss,
            start_value,
            theta: t,
            sigma2: s2,
            value: res.value,
            evals: res.evals,
        });
    }
    let best = traces
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if !traces[best].value.is_finite() {
        return Err(Error::EstimationFailed(restarts));
    }
    Ok(MapResult { theta: traces[best].theta.clone(), sigma2: traces[best].sigma2, value: traces[best].value, restarts: traces })
}
