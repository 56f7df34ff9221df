//! Modular calibration: Gaussian likelihood conditional on emulator draws,
//! optional basis discrepancy, and adaptive random-walk Metropolis over
//! `(theta, log sigma^2)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisModel;
use crate::dataset::{FieldData, Standardization};
use crate::discrepancy::{fit_discrepancy, refit_discrepancy, DiscrepancyHyper, DiscrepancyModel, DiscrepancySpec};
use crate::emulator::WeightEmulator;
use crate::error::{arg_err, shape_err};
use crate::gp::{sample_t, PredictiveT};
use crate::linalg::{cholesky, quantile};
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Posterior draws used for calibrated prediction.
pub const DEFAULT_PREDICTION_DRAWS: usize = 100;
const ADAPT_SCALE: f64 = 2.38 * 2.38;
const ADAPT_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPrior {
    InverseGamma { alpha: f64, beta: f64 },
    HalfCauchy { scale: f64 },
}

impl Default for SigmaPrior {
    fn default() -> Self {
        SigmaPrior::InverseGamma { alpha: 1.0, beta: 0.001 }
    }
}

impl SigmaPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SigmaPrior::InverseGamma { alpha, beta } => alpha > 0.0 && beta > 0.0,
            SigmaPrior::HalfCauchy { scale } => scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(arg_err!("invalid noise prior {self:?}"))
        }
    }

    /// Normalized log density of `sigma2`.
    pub fn ln_pdf(&self, sigma2: f64) -> f64 {
        if !(sigma2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            SigmaPrior::InverseGamma { alpha, beta } => {
                alpha * beta.ln() - libm::lgamma(alpha) - (alpha + 1.0) * sigma2.ln() - beta / sigma2
            }
            SigmaPrior::HalfCauchy { scale } => {
                (2.0 / core::f64::consts::PI / scale).ln() - (1.0 + (sigma2 / scale).powi(2)).ln()
            }
        }
    }
}

/// Everything the calibration likelihood needs, in standardized units.
pub struct CalibrationProblem<'a> {
    pub emulator: &'a dyn WeightEmulator,
    /// `n x d_x` controllable field inputs.
    pub x_field: DMatrix<f64>,
    /// `d_obs x n` standardized observations.
    pub y_field: DMatrix<f64>,
    /// Basis rows at the observed functional indices, `d_obs x p`.
    pub b_obs: DMatrix<f64>,
    /// Output transform restricted to the observed indices.
    pub standardization: Standardization,
    pub t_dim: usize,
    pub sigma_prior: SigmaPrior,
    pub discrepancy: Option<DiscrepancySpec>,
    pub m_c: usize,
    /// Discrepancy hyperparameters are re-optimized every this many
    /// iterations (1 = always).
    pub refit_every: usize,
}

impl<'a> CalibrationProblem<'a> {
    pub fn new(
        emulator: &'a dyn WeightEmulator,
        field: &FieldData,
        t_dim: usize,
        sigma_prior: SigmaPrior,
        discrepancy: Option<DiscrepancySpec>,
        m_c: usize,
    ) -> Result<Self> {
        sigma_prior.validate()?;
        if field.x.ncols() + t_dim != emulator.input_dim() {
            return Err(shape_err!(
                "{} field inputs plus {t_dim} parameters for a {}-input emulator",
                field.x.ncols(),
                emulator.input_dim()
            ));
        }
        if t_dim == 0 {
            return Err(arg_err!("nothing to calibrate"));
        }
        if let Some(spec) = &discrepancy {
            if spec.k.nrows() != field.obs_index.len() {
                return Err(shape_err!("discrepancy basis has {} rows for {} observed outputs", spec.k.nrows(), field.obs_index.len()));
            }
        }
        let st = emulator.standardization();
        if let Some(&bad) = field.obs_index.iter().find(|&&r| r >= st.n_outputs()) {
            return Err(shape_err!("output index {bad} beyond the emulator's {} outputs", st.n_outputs()));
        }
        let standardization = st.restrict(&field.obs_index);
        Ok(Self {
            emulator,
            x_field: field.x.clone(),
            y_field: field.standardized(st)?,
            b_obs: emulator.basis().rows(&field.obs_index),
            standardization,
            t_dim,
            sigma_prior,
            discrepancy,
            m_c,
            refit_every: 1,
        })
    }

    pub fn n_field(&self) -> usize {
        self.x_field.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.y_field.nrows()
    }

    pub fn basis(&self) -> &BasisModel {
        self.emulator.basis()
    }

    /// Emulator input at field point `i` and parameters `t`.
    pub fn joint_input(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(x.len() + t.len());
        v.extend_from_slice(x);
        v.extend_from_slice(t);
        v
    }

    fn field_input(&self, i: usize) -> Vec<f64> {
        self.x_field.row(i).iter().copied().collect()
    }

    /// Predictive weight laws at every field point.
    pub fn field_weights(&self, t: &[f64]) -> Result<Vec<Vec<PredictiveT>>> {
        (0..self.n_field())
            .map(|i| self.emulator.predict_weights(&self.joint_input(&self.field_input(i), t), self.m_c))
            .collect()
    }

    /// Residuals `y_i - B w_i` for sampled weights.
    fn sampled_residuals<R: Rng + ?Sized>(&self, t: &[f64], rng: &mut R) -> Result<DMatrix<f64>> {
        let laws = self.field_weights(t)?;
        let p = self.b_obs.ncols();
        let mut r = self.y_field.clone();
        for (i, law) in laws.iter().enumerate() {
            let w = DVector::from_iterator(p, law.iter().map(|l| sample_t(l, rng)));
            let fit = &self.b_obs * w;
            for k in 0..r.nrows() {
                r[(k, i)] -= fit[k];
            }
        }
        Ok(r)
    }

    fn in_support(&self, t: &[f64], sigma2: f64) -> bool {
        t.len() == self.t_dim && t.iter().all(|v| (0.0..=1.0).contains(v)) && sigma2 > 0.0 && sigma2.is_finite()
    }

    fn data_term(&self, sse: f64, sigma2: f64) -> f64 {
        let nd = (self.n_field() * self.n_obs()) as f64;
        -0.5 * (nd * sigma2.ln() + sse / sigma2)
    }
}

/// Discrepancy hyperparameters carried between MCMC iterations.
#[derive(Clone, Debug, Default)]
pub struct DiscrepancyCache {
    hyper: Option<Vec<Option<DiscrepancyHyper>>>,
}

fn discrepancy_for(
    problem: &CalibrationProblem<'_>,
    spec: &DiscrepancySpec,
    r: &DMatrix<f64>,
    cache: Option<(&mut DiscrepancyCache, bool)>,
) -> Result<DiscrepancyModel> {
    match cache {
        Some((c, false)) if c.hyper.is_some() => refit_discrepancy(r, spec, &problem.x_field, c.hyper.as_deref().unwrap_or(&[])),
        Some((c, _)) => {
            let model = fit_discrepancy(r, spec, &problem.x_field)?;
            c.hyper = Some(model.hyper());
            Ok(model)
        }
        None => fit_discrepancy(r, spec, &problem.x_field),
    }
}

/// Unnormalized log posterior without discrepancy: fresh emulator draws at
/// every field point, Gaussian residual likelihood with variance `sigma2`,
/// uniform prior on `t`. Out-of-support points give `-inf`.
pub fn log_posterior_unbiased<R: Rng + ?Sized>(problem: &CalibrationProblem<'_>, t: &[f64], sigma2: f64, rng: &mut R) -> Result<f64> {
    if !problem.in_support(t, sigma2) {
        return Ok(f64::NEG_INFINITY);
    }
    let r = problem.sampled_residuals(t, rng)?;
    Ok(problem.data_term(r.norm_squared(), sigma2) + problem.sigma_prior.ln_pdf(sigma2))
}

/// Unnormalized log posterior with the discrepancy model refit to the
/// current residuals and one draw of its weights per field point.
pub fn log_posterior_biased<R: Rng + ?Sized>(problem: &CalibrationProblem<'_>, t: &[f64], sigma2: f64, rng: &mut R) -> Result<f64> {
    log_posterior_cached(problem, t, sigma2, rng, None)
}

fn log_posterior_cached<R: Rng + ?Sized>(
    problem: &CalibrationProblem<'_>,
    t: &[f64],
    sigma2: f64,
    rng: &mut R,
    cache: Option<(&mut DiscrepancyCache, bool)>,
) -> Result<f64> {
    let Some(spec) = &problem.discrepancy else {
        return log_posterior_unbiased(problem, t, sigma2, rng);
    };
    if !problem.in_support(t, sigma2) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut r = problem.sampled_residuals(t, rng)?;
    if spec.n_basis() > 0 {
        let model = discrepancy_for(problem, spec, &r, cache)?;
        for i in 0..problem.n_field() {
            let laws = model.predict(&problem.field_input(i))?;
            let v = DVector::from_iterator(laws.len(), laws.iter().map(|l| sample_t(l, rng)));
            let delta = &spec.k * v;
            for k in 0..r.nrows() {
                r[(k, i)] -= delta[k];
            }
        }
    }
    Ok(problem.data_term(r.norm_squared(), sigma2) + problem.sigma_prior.ln_pdf(sigma2))
}

/// Log posterior of whichever model the problem describes.
pub fn log_posterior<R: Rng + ?Sized>(problem: &CalibrationProblem<'_>, t: &[f64], sigma2: f64, rng: &mut R) -> Result<f64> {
    log_posterior_cached(problem, t, sigma2, rng, None)
}

#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    /// `S x d_t`, every iteration including burn-in.
    pub theta: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<bool>,
    pub n_burn: usize,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    /// Frozen proposal covariance over `(theta, log sigma2)`.
    pub proposal_cov: DMatrix<f64>,
    /// Likelihood evaluations that failed numerically (treated as rejections).
    pub failed_evaluations: usize,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    pub fn post_burn(&self) -> core::ops::Range<usize> {
        self.n_burn..self.len()
    }

    /// Post burn-in draws of coordinate `k` of `theta`.
    pub fn theta_column(&self, k: usize) -> Vec<f64> {
        self.post_burn().map(|s| self.theta[(s, k)]).collect()
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        let n = self.post_burn().len() as f64;
        (0..self.theta.ncols()).map(|k| self.theta_column(k).iter().sum::<f64>() / n).collect()
    }

    /// Equal-tailed interval of `theta_k` at level `1 - alpha`.
    pub fn credible_interval(&self, k: usize, alpha: f64) -> (f64, f64) {
        let c = self.theta_column(k);
        (quantile(&c, alpha / 2.0), quantile(&c, 1.0 - alpha / 2.0))
    }

    /// `count` evenly spaced post burn-in iterations.
    pub fn thinned(&self, count: usize) -> Result<Vec<usize>> {
        let range = self.post_burn();
        let avail = range.len();
        if avail == 0 {
            return Err(Error::EmptyPosterior);
        }
        if count == 0 || count > avail {
            return Err(arg_err!("{count} draws requested from {avail} post burn-in samples"));
        }
        Ok((0..count).map(|s| range.start + s * avail / count).collect())
    }
}

fn initial_sigma2(problem: &CalibrationProblem<'_>, t: &[f64]) -> Result<f64> {
    if problem.n_field() == 0 {
        return Ok(1.0);
    }
    let laws = problem.field_weights(t)?;
    let mut sse = 0.0;
    for (i, law) in laws.iter().enumerate() {
        let w = DVector::from_iterator(law.len(), law.iter().map(|l| l.mean));
        sse += (problem.y_field.column(i) - &problem.b_obs * w).norm_squared();
    }
    Ok((sse / (problem.n_field() * problem.n_obs()) as f64).max(1e-6))
}

/// Adaptive random-walk Metropolis over `(theta, log sigma2)`. The proposal
/// covariance is adapted during the first `n_burn` of `n_samples`
/// iterations and frozen afterwards. The current state's stochastic log
/// posterior is carried over rather than re-evaluated.
pub fn mcmc_calibrate(problem: &CalibrationProblem<'_>, n_samples: usize, n_burn: usize, seed: u64) -> Result<PosteriorSamples> {
    if n_burn >= n_samples {
        return Err(arg_err!("burn-in {n_burn} must be below the sample count {n_samples}"));
    }
    if problem.refit_every == 0 {
        return Err(arg_err!("refit_every must be positive"));
    }
    let dt = problem.t_dim;
    let dim = dt + 1;
    let mut cache = DiscrepancyCache::default();

    let mut t = vec![0.5; dt];
    let mut log_s2 = initial_sigma2(problem, &t)?.ln();
    let mut init_rng = rng_for(seed, &[stream::MCMC, u64::MAX]);
    let mut lp = log_posterior_cached(problem, &t, log_s2.exp(), &mut init_rng, Some((&mut cache, true)))?;
    if !lp.is_finite() {
        return Err(Error::EmptyPosterior);
    }
    lp += log_s2;

    let mut c0 = DMatrix::zeros(dim, dim);
    for k in 0..dt {
        c0[(k, k)] = 0.01;
    }
    c0[(dt, dt)] = 0.25;
    let mut prop_chol = cholesky(c0.clone(), "initial proposal")?.l();
    let mut prop_cov = c0;

    let adapt_from = 100.min(n_burn / 2);
    let mut mean = DVector::zeros(dim);
    let mut m2 = DMatrix::zeros(dim, dim);

    let mut theta = DMatrix::zeros(n_samples, dt);
    let mut sigma2 = Vec::with_capacity(n_samples);
    let mut log_post = Vec::with_capacity(n_samples);
    let mut accepted = Vec::with_capacity(n_samples);
    let mut failed = 0;

    for it in 0..n_samples {
        let mut rng = rng_for(seed, &[stream::MCMC, it as u64]);
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &prop_chol * z;
        let t_new: Vec<f64> = (0..dt).map(|k| t[k] + step[k]).collect();
        let log_s2_new = log_s2 + step[dt];
        let refit = it % problem.refit_every == 0;
        let lp_new = match log_posterior_cached(problem, &t_new, log_s2_new.exp(), &mut rng, Some((&mut cache, refit))) {
            Ok(v) if v.is_finite() => v + log_s2_new,
            Ok(_) => f64::NEG_INFINITY,
            Err(e) if e.is_numerical() => {
                failed += 1;
                f64::NEG_INFINITY
            }
            Err(e) => return Err(e),
        };
        let u: f64 = rng.random();
        let acc = lp_new > f64::NEG_INFINITY && u.ln() < lp_new - lp;
        if acc {
            t = t_new;
            log_s2 = log_s2_new;
            lp = lp_new;
        }
        for k in 0..dt {
            theta[(it, k)] = t[k];
        }
        sigma2.push(log_s2.exp());
        log_post.push(lp - log_s2);
        accepted.push(acc);

        // Welford update of the running mean and scatter
        let phi = DVector::from_fn(dim, |k, _| if k < dt { t[k] } else { log_s2 });
        let count = (it + 1) as f64;
        let delta = &phi - &mean;
        mean += &delta / count;
        m2 += &delta * (&phi - &mean).transpose();
        if it + 1 < n_burn && it + 1 >= adapt_from && it >= 1 {
            let cov = &m2 / (count - 1.0);
            let mut cand = cov * (ADAPT_SCALE / dim as f64);
            for k in 0..dim {
                cand[(k, k)] += ADAPT_EPS;
            }
            if let Ok(ch) = cholesky(cand.clone(), "adapted proposal") {
                // a chain stuck at its start has a degenerate scatter
                if (0..dim).all(|k| cand[(k, k)] > 1e3 * ADAPT_EPS) {
                    prop_chol = ch.l();
                    prop_cov = cand;
                }
            }
        }
    }
    let post = n_samples - n_burn;
    let acceptance_rate = accepted[n_burn..].iter().filter(|a| **a).count() as f64 / post as f64;
    Ok(PosteriorSamples {
        theta,
        sigma2,
        log_post,
        accepted,
        n_burn,
        acceptance_rate,
        proposal_cov: prop_cov,
        failed_evaluations: failed,
    })
}

/// Pointwise predictive summary in raw output units, `d_obs x k`.
#[derive(Clone, Debug)]
pub struct CalibratedPrediction {
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    /// Sampled curves per new input, each `d_obs x S_sub`.
    pub samples: Vec<DMatrix<f64>>,
}

/// Predictions at `x_new` (`k x d_x`) from `draws` evenly thinned posterior
/// samples: an emulator draw at `(x, theta_s)`, a discrepancy draw when the
/// problem has one, and observation noise with variance `sigma2_s`.
pub fn calibrated_predict(
    problem: &CalibrationProblem<'_>,
    posterior: &PosteriorSamples,
    x_new: &DMatrix<f64>,
    m: usize,
    draws: usize,
    seed: u64,
) -> Result<CalibratedPrediction> {
    if x_new.ncols() != problem.x_field.ncols() {
        return Err(shape_err!("{} input columns, field has {}", x_new.ncols(), problem.x_field.ncols()));
    }
    let picks = posterior.thinned(draws)?;
    let (d, k) = (problem.n_obs(), x_new.nrows());
    let mut samples = vec![DMatrix::zeros(d, draws); k];
    for (s, &it) in picks.iter().enumerate() {
        let mut rng = rng_for(seed, &[stream::PREDICT, s as u64]);
        let t: Vec<f64> = posterior.theta.row(it).iter().copied().collect();
        let s2 = posterior.sigma2[it];
        let disc = match &problem.discrepancy {
            Some(spec) if spec.n_basis() > 0 => {
                let r = problem.sampled_residuals(&t, &mut rng)?;
                Some((spec, fit_discrepancy(&r, spec, &problem.x_field)?))
            }
            _ => None,
        };
        let noise = Normal::new(0.0, s2.sqrt()).map_err(|e| arg_err!("{e}"))?;
        for j in 0..k {
            let x: Vec<f64> = x_new.row(j).iter().copied().collect();
            let laws = problem.emulator.predict_weights(&problem.joint_input(&x, &t), m)?;
            let w = DVector::from_iterator(laws.len(), laws.iter().map(|l| sample_t(l, &mut rng)));
            let mut z = &problem.b_obs * w;
            if let Some((spec, model)) = &disc {
                let vl = model.predict(&x)?;
                let v = DVector::from_iterator(vl.len(), vl.iter().map(|l| sample_t(l, &mut rng)));
                z += &spec.k * v;
            }
            for i in 0..d {
                let e = if s2 > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                samples[j][(i, s)] = (z[i] + e) * problem.standardization.scale_at(i) + problem.standardization.mean[i];
            }
        }
    }
    let mut mean = DMatrix::zeros(d, k);
    let mut lower = DMatrix::zeros(d, k);
    let mut upper = DMatrix::zeros(d, k);
    for j in 0..k {
        for i in 0..d {
            let row: Vec<f64> = samples[j].row(i).iter().copied().collect();
            mean[(i, j)] = row.iter().sum::<f64>() / draws as f64;
            lower[(i, j)] = quantile(&row, 0.025);
            upper[(i, j)] = quantile(&row, 0.975);
        }
    }
    Ok(CalibratedPrediction { mean, lower, upper, samples })
}
