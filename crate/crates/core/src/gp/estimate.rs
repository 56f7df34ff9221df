//! Subsampling schemes and bootstrapped MAP lengthscale estimation.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::likelihood::{nlml_parts, GammaPrior};
use super::Lengthscales;
use crate::error::{arg_err, shape_err};
use crate::linalg::{covariance, median, select_rows};
use crate::optim::{minimize_box, BfgsOptions};
use crate::{Error, Result};

/// Optimizer bounds for lengthscales.
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-4, 1e4);
/// Starts per MAP fit.
pub const MAP_RESTARTS: usize = 3;
const BLHS_RETRIES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SubsampleMethod {
    /// Block Latin hypercube with `divisions` blocks per coordinate.
    Blhs { divisions: usize },
    /// Stratified random sample of `size` points.
    Stratified { size: usize },
    /// Every point (no resampling).
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleSpec {
    #[serde(flatten)]
    pub method: SubsampleMethod,
    pub replicates: usize,
}

impl Default for SubsampleSpec {
    fn default() -> Self {
        Self { method: SubsampleMethod::Blhs { divisions: 4 }, replicates: 25 }
    }
}

fn level(v: f64, divisions: usize) -> usize {
    ((v * divisions as f64).floor().max(0.0) as usize).min(divisions - 1)
}

/// Points inside a random Latin hypercube of blocks: each coordinate is cut
/// into `divisions` blocks and `divisions` blocks are chosen with no two
/// sharing a level in any coordinate.
pub fn blhs_subsample<R: Rng + ?Sized>(x: &DMatrix<f64>, divisions: usize, rng: &mut R) -> Result<Vec<usize>> {
    if divisions < 2 {
        return Err(arg_err!("BLHS needs at least 2 divisions, got {divisions}"));
    }
    let d = x.ncols();
    // perms[k][b] is block b's level in coordinate k
    let perms: Vec<Vec<usize>> = (0..d)
        .map(|_| {
            let mut p: Vec<usize> = (0..divisions).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let mut block_of_level0 = vec![0; divisions];
    for (b, &lv) in perms[0].iter().enumerate() {
        block_of_level0[lv] = b;
    }
    let picked: Vec<usize> = (0..x.nrows())
        .filter(|&i| {
            let b = block_of_level0[level(x[(i, 0)], divisions)];
            (1..d).all(|k| level(x[(i, k)], divisions) == perms[k][b])
        })
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(picked)
}

/// Projection of the centered rows on the leading principal axis.
fn first_principal_coordinate(x: &DMatrix<f64>) -> Vec<f64> {
    let mu = x.row_mean();
    let cov = covariance(x);
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k);
    (0..x.nrows()).map(|i| (x.row(i) - &mu).dot(&v.transpose())).collect()
}

/// Stratified sample without replacement: points are binned by quantiles of
/// the first principal coordinate into `ceil(sqrt(size))` bins and each bin
/// contributes its proportional share (largest-remainder rounding).
pub fn stratified_subsample<R: Rng + ?Sized>(x: &DMatrix<f64>, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    let m = x.nrows();
    if size > m {
        return Err(arg_err!("subsample size {size} exceeds {m} points"));
    }
    if size == 0 {
        return Err(arg_err!("subsample size must be positive"));
    }
    if size == m {
        return Ok((0..m).collect());
    }
    let proj = first_principal_coordinate(x);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let bins = (size as f64).sqrt().ceil() as usize;
    let bounds: Vec<usize> = (0..=bins).map(|b| b * m / bins).collect();
    let shares: Vec<f64> = (0..bins).map(|b| (bounds[b + 1] - bounds[b]) as f64 * size as f64 / m as f64).collect();
    let mut alloc: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut left = size - alloc.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..bins).collect();
    by_remainder.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    for &b in by_remainder.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[b] < bounds[b + 1] - bounds[b] {
            alloc[b] += 1;
            left -= 1;
        }
    }
    let mut picked = Vec::with_capacity(size);
    for b in 0..bins {
        let members = &order[bounds[b]..bounds[b + 1]];
        for j in index::sample(rng, members.len(), alloc[b]) {
            picked.push(members[j]);
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// MAP lengthscales on `(x, w)`: projected BFGS on `log l` within
/// [`LENGTHSCALE_BOUNDS`] from the prior mode plus `restarts - 1` random
/// starts; the best optimum wins.
pub fn fit_map_lengthscales<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    nugget: f64,
    prior: GammaPrior,
    restarts: usize,
    rng: &mut R,
) -> Result<Lengthscales> {
    let d = x.ncols();
    if x.nrows() != w.len() {
        return Err(shape_err!("{} design rows but {} responses", x.nrows(), w.len()));
    }
    let (lo, hi) = (vec![LENGTHSCALE_BOUNDS.0.ln(); d], vec![LENGTHSCALE_BOUNDS.1.ln(); d]);
    let centre = prior.mode().ln();
    let objective = |u: &[f64]| -> Option<(f64, Vec<f64>)> {
        let l: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        let parts = nlml_parts(x, w, &l, nugget, true).ok()?;
        let mut f = parts.value;
        let mut g = parts.d_lengthscales;
        for k in 0..d {
            f -= prior.ln_pdf(l[k]);
            g[k] = l[k] * (g[k] - prior.d_ln_pdf(l[k]));
        }
        Some((f, g))
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..restarts.max(1) {
        let start: Vec<f64> = (0..d)
            .map(|_| if r == 0 { centre } else { centre + rng.random_range(-2.0..2.0) })
            .collect();
        if let Some(min) = minimize_box(objective, &start, &lo, &hi, BfgsOptions::default()) {
            if best.as_ref().is_none_or(|b| min.f < b.0) {
                best = Some((min.f, min.x));
            }
        }
    }
    let (_, u) = best.ok_or(Error::EstimationFailed(restarts.max(1)))?;
    Lengthscales::new(u.into_iter().map(|v| v.exp()).collect())
}

/// Bootstrapped lengthscale estimate: one MAP fit per subsample replicate,
/// then the coordinatewise median.
pub fn estimate_lengthscales<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    spec: &SubsampleSpec,
    nugget: f64,
    rng: &mut R,
) -> Result<Lengthscales> {
    let (m, d) = x.shape();
    if m != w.len() {
        return Err(shape_err!("{m} design rows but {} responses", w.len()));
    }
    if spec.replicates < 1 {
        return Err(arg_err!("at least one replicate is required"));
    }
    let min_size = d + 2;
    if let SubsampleMethod::Stratified { size } = spec.method {
        if size < min_size {
            return Err(arg_err!("subsample size {size} below d + 2 = {min_size}"));
        }
    }
    let mut fits: Vec<Vec<f64>> = Vec::with_capacity(spec.replicates);
    for _ in 0..spec.replicates {
        let idx = match spec.method {
            SubsampleMethod::Full => (0..m).collect(),
            SubsampleMethod::Stratified { size } => stratified_subsample(x, size, rng)?,
            SubsampleMethod::Blhs { divisions } => {
                let mut found = None;
                for _ in 0..BLHS_RETRIES {
                    match blhs_subsample(x, divisions, rng) {
                        Ok(idx) if idx.len() >= min_size => {
                            found = Some(idx);
                            break;
                        }
                        _ => {}
                    }
                }
                match found {
                    Some(idx) => idx,
                    None => continue,
                }
            }
        };
        let xs = select_rows(x, &idx);
        let ws = DVector::from_fn(idx.len(), |i, _| w[idx[i]]);
        let prior = GammaPrior::from_design(&xs);
        if let Ok(l) = fit_map_lengthscales(&xs, &ws, nugget, prior, MAP_RESTARTS, rng) {
            fits.push(l.into());
        }
    }
    if fits.is_empty() {
        return Err(Error::EstimationFailed(spec.replicates));
    }
    let med: Vec<f64> = (0..d).map(|k| median(&fits.iter().map(|f| f[k]).collect::<Vec<_>>())).collect();
    Lengthscales::new(med)
}
