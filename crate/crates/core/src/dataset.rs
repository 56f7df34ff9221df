//! Data containers, standardization, experimental designs and the ball-drop
//! generators used throughout the tests and the CLI presets.
//!
//! Output matrices are stored `d_y x M`: one column per run, one row per
//! functional index.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err};
use crate::{Error, Result};

/// Natural-unit bounds of one input, used to map it onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl InputRange {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), lo, hi }
    }

    fn check(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(arg_err!("input range {:?} needs lo < hi", self.name));
        }
        Ok(())
    }

    pub fn to_unit(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

/// Maps each coordinate to `(x - lo) / (hi - lo)`.
///
/// With `strict` set, values outside `[lo, hi]` are rejected.
pub fn to_unit_hypercube(x_raw: &DMatrix<f64>, ranges: &[InputRange], strict: bool) -> Result<DMatrix<f64>> {
    if x_raw.ncols() != ranges.len() {
        return Err(shape_err!("{} input columns but {} ranges", x_raw.ncols(), ranges.len()));
    }
    for r in ranges {
        r.check()?;
    }
    let mut out = x_raw.clone();
    for (j, r) in ranges.iter().enumerate() {
        for i in 0..out.nrows() {
            let v = x_raw[(i, j)];
            if strict && !(r.lo..=r.hi).contains(&v) {
                return Err(Error::OutOfRange { dim: j, value: v, lo: r.lo, hi: r.hi });
            }
            out[(i, j)] = r.to_unit(v);
        }
    }
    Ok(out)
}

pub fn from_unit_hypercube(x: &DMatrix<f64>, ranges: &[InputRange]) -> Result<DMatrix<f64>> {
    if x.ncols() != ranges.len() {
        return Err(shape_err!("{} input columns but {} ranges", x.ncols(), ranges.len()));
    }
    for r in ranges {
        r.check()?;
    }
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| ranges[j].from_unit(x[(i, j)])))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scale {
    /// One standard deviation for the whole centered matrix (total variance 1).
    Global(f64),
    /// One standard deviation per functional index.
    PerIndex(Vec<f64>),
}

/// Parameters of the output standardization `z = (z_raw - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Scale,
}

impl Standardization {
    pub fn n_outputs(&self) -> usize {
        self.mean.len()
    }

    pub fn scale_at(&self, i: usize) -> f64 {
        match &self.scale {
            Scale::Global(s) => *s,
            Scale::PerIndex(s) => s[i],
        }
    }

    /// The transform restricted to a subset of functional indices.
    pub fn restrict(&self, rows: &[usize]) -> Standardization {
        Standardization {
            mean: rows.iter().map(|&r| self.mean[r]).collect(),
            scale: match &self.scale {
                Scale::Global(s) => Scale::Global(*s),
                Scale::PerIndex(s) => Scale::PerIndex(rows.iter().map(|&r| s[r]).collect()),
            },
        }
    }

    /// Applies the forward transform to new raw outputs (`d_y x k`).
    pub fn apply(&self, z_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z_raw.nrows() != self.n_outputs() {
            return Err(shape_err!("{} output rows, transform has {}", z_raw.nrows(), self.n_outputs()));
        }
        Ok(DMatrix::from_fn(z_raw.nrows(), z_raw.ncols(), |i, j| {
            (z_raw[(i, j)] - self.mean[i]) / self.scale_at(i)
        }))
    }
}

/// Centers every functional index and scales to unit total variance (or per
/// index when `per_index_scale` is set).
pub fn standardize(z_raw: &DMatrix<f64>, per_index_scale: bool) -> Result<(DMatrix<f64>, Standardization)> {
    let (dy, m) = z_raw.shape();
    if dy < 1 || m < 2 {
        return Err(arg_err!("standardize needs d_y >= 1 and M >= 2, got {dy}x{m}"));
    }
    let mean: Vec<f64> = (0..dy).map(|i| z_raw.row(i).mean()).collect();
    let centered = DMatrix::from_fn(dy, m, |i, j| z_raw[(i, j)] - mean[i]);
    let scale = if per_index_scale {
        let s: Vec<f64> = (0..dy)
            .map(|i| (centered.row(i).iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt())
            .collect();
        if s.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateOutput("a functional index has zero variance"));
        }
        Scale::PerIndex(s)
    } else {
        let s = (centered.iter().map(|v| v * v).sum::<f64>() / (dy * m) as f64).sqrt();
        if !(s > 0.0) {
            return Err(Error::DegenerateOutput("all runs have identical output"));
        }
        Scale::Global(s)
    };
    let st = Standardization { mean, scale };
    let z = DMatrix::from_fn(dy, m, |i, j| centered[(i, j)] / st.scale_at(i));
    Ok((z, st))
}

pub fn unstandardize(z_std: &DMatrix<f64>, st: &Standardization) -> Result<DMatrix<f64>> {
    if z_std.nrows() != st.n_outputs() {
        return Err(shape_err!("{} output rows, transform has {}", z_std.nrows(), st.n_outputs()));
    }
    if let Scale::PerIndex(s) = &st.scale {
        if s.len() != st.n_outputs() {
            return Err(shape_err!("per-index scale has {} entries for {} outputs", s.len(), st.n_outputs()));
        }
    }
    Ok(DMatrix::from_fn(z_std.nrows(), z_std.ncols(), |i, j| {
        z_std[(i, j)] * st.scale_at(i) + st.mean[i]
    }))
}

/// Simulator ensemble: unit-hypercube design plus raw functional outputs.
#[derive(Clone, Debug)]
pub struct Ensemble {
    /// `M x d_x`, every entry in `[0, 1]`.
    pub x: DMatrix<f64>,
    /// `d_y x M`.
    pub z_raw: DMatrix<f64>,
    pub input_ranges: Vec<InputRange>,
}

impl Ensemble {
    pub fn new(x: DMatrix<f64>, z_raw: DMatrix<f64>, input_ranges: Vec<InputRange>) -> Result<Self> {
        if x.nrows() != z_raw.ncols() {
            return Err(shape_err!("{} design rows but {} output columns", x.nrows(), z_raw.ncols()));
        }
        if x.ncols() != input_ranges.len() {
            return Err(shape_err!("{} design columns but {} ranges", x.ncols(), input_ranges.len()));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(arg_err!("design entry {v} outside the unit hypercube"));
        }
        Ok(Self { x, z_raw, input_ranges })
    }

    /// Builds an ensemble from natural-unit inputs (`M x d_x`).
    pub fn from_raw(x_raw: &DMatrix<f64>, z_raw: DMatrix<f64>, input_ranges: Vec<InputRange>) -> Result<Self> {
        let x = to_unit_hypercube(x_raw, &input_ranges, true)?;
        Self::new(x, z_raw, input_ranges)
    }

    pub fn n_runs(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.z_raw.nrows()
    }
}

/// Field observations. Inputs are the controllable inputs only, on the unit
/// scale of the matching ensemble columns.
#[derive(Clone, Debug)]
pub struct FieldData {
    /// `n x d_x`.
    pub x: DMatrix<f64>,
    /// `d_obs x n`, raw output units.
    pub y: DMatrix<f64>,
    /// Functional index (row of the ensemble outputs) of each row of `y`.
    pub obs_index: Vec<usize>,
}

impl FieldData {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, obs_index: Vec<usize>, ensemble_outputs: usize) -> Result<Self> {
        if x.nrows() != y.ncols() {
            return Err(shape_err!("{} field inputs but {} observation columns", x.nrows(), y.ncols()));
        }
        if obs_index.len() != y.nrows() {
            return Err(shape_err!("{} observation rows but {} output indices", y.nrows(), obs_index.len()));
        }
        if let Some(&bad) = obs_index.iter().find(|&&r| r >= ensemble_outputs) {
            return Err(shape_err!("output index {bad} beyond the ensemble's {ensemble_outputs} outputs"));
        }
        Ok(Self { x, y, obs_index })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Observations standardized with the ensemble transform.
    pub fn standardized(&self, st: &Standardization) -> Result<DMatrix<f64>> {
        st.restrict(&self.obs_index).apply(&self.y)
    }
}

/// Random Latin hypercube: one point in each of `m` equal strata per dimension.
pub fn random_lhs<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(m, d);
    let mut perm: Vec<usize> = (0..m).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for i in 0..m {
            let u: f64 = rng.random();
            x[(i, j)] = (perm[i] as f64 + u) / m as f64;
        }
    }
    x
}

/// Smallest pairwise distance between rows.
pub fn min_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.nrows() {
        for j in (i + 1)..x.nrows() {
            let d: f64 = (0..x.ncols()).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
            best = best.min(d);
        }
    }
    best.sqrt()
}

pub const MAXIMIN_CANDIDATES: usize = 50;

/// Maximin Latin hypercube on `[0,1]^d`: best of [`MAXIMIN_CANDIDATES`]
/// random Latin hypercubes by minimum pairwise distance.
pub fn lhs_design<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut best = random_lhs(m, d, rng);
    if m < 2 {
        return best;
    }
    let mut best_score = min_pairwise_distance(&best);
    for _ in 1..MAXIMIN_CANDIDATES {
        let cand = random_lhs(m, d, rng);
        let score = min_pairwise_distance(&cand);
        if score > best_score {
            best = cand;
            best_score = score;
        }
    }
    best
}

/// Exponent on the drag term: `1/2` for the physical model, `1/3` for the
/// deliberately biased simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BallDropVariant {
    Unbiased,
    Biased,
}

impl BallDropVariant {
    fn exponent(self) -> f64 {
        match self {
            BallDropVariant::Unbiased => 0.5,
            BallDropVariant::Biased => 1.0 / 3.0,
        }
    }
}

/// `acosh(exp(u))` for `u >= 0`, without overflowing `exp`.
fn acosh_exp(u: f64) -> f64 {
    u + (1.0 + (-(-2.0 * u).exp_m1()).sqrt()).ln()
}

/// Fall time to each distance: `acosh(exp(C d / R)) / (C g / R)^q`.
pub fn ball_drop(c: f64, r: f64, g: f64, distances: &[f64], variant: BallDropVariant) -> Result<Vec<f64>> {
    if !(c > 0.0 && r > 0.0 && g > 0.0) {
        return Err(arg_err!("ball drop needs positive C, R and g (got {c}, {r}, {g})"));
    }
    if let Some(d) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(arg_err!("negative drop distance {d}"));
    }
    let denom = (c * g / r).powf(variant.exponent());
    Ok(distances.iter().map(|&d| acosh_exp(c * d / r) / denom).collect())
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Settings for simulated field observations of the ball drop.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSpec {
    pub radii: Vec<f64>,
    pub distances: Vec<f64>,
    pub c: f64,
    pub g: f64,
    pub radius_range: InputRange,
    /// Position of each observed distance in the ensemble's functional index.
    pub obs_index: Vec<usize>,
}

/// Standard gravity used by every preset.
pub const GRAVITY: f64 = 9.8;

impl FieldSpec {
    /// Five radii, four distances, `C = 0.1`.
    pub fn unbiased() -> Self {
        Self {
            radii: vec![0.05, 0.1, 0.15, 0.2, 0.25],
            distances: vec![5.0, 10.0, 15.0, 20.0],
            c: 0.1,
            g: GRAVITY,
            radius_range: InputRange::new("R", 0.025, 0.3),
            // the ensemble is observed at 1, 2, ..., 25 m
            obs_index: vec![4, 9, 14, 19],
        }
    }

    /// Ten radii in `[0.25, 1.75]`, 100 distances up to 25 m, `C = 0.25`.
    pub fn biased() -> Self {
        let distances = biased_distances();
        Self {
            radii: linspace(0.25, 1.75, 10),
            obs_index: (0..distances.len()).collect(),
            distances,
            c: 0.25,
            g: GRAVITY,
            radius_range: InputRange::new("R", 0.25, 1.75),
        }
    }
}

fn biased_distances() -> Vec<f64> {
    (1..=100).map(|k| 0.25 * k as f64).collect()
}

/// Physical-model observations at `spec` plus i.i.d. `N(0, noise_sd^2)` errors.
pub fn make_field_data<R: Rng + ?Sized>(spec: &FieldSpec, noise_sd: f64, rng: &mut R) -> Result<FieldData> {
    if !(noise_sd >= 0.0) {
        return Err(arg_err!("noise_sd must be non-negative, got {noise_sd}"));
    }
    let n = spec.radii.len();
    let d = spec.distances.len();
    let noise = Normal::new(0.0, noise_sd).map_err(|e| arg_err!("{e}"))?;
    let mut y = DMatrix::zeros(d, n);
    for (i, &r) in spec.radii.iter().enumerate() {
        let truth = ball_drop(spec.c, r, spec.g, &spec.distances, BallDropVariant::Unbiased)?;
        for (k, t) in truth.into_iter().enumerate() {
            y[(k, i)] = if noise_sd > 0.0 { t + noise.sample(rng) } else { t };
        }
    }
    let x = DMatrix::from_fn(n, 1, |i, _| spec.radius_range.to_unit(spec.radii[i]));
    let max_index = spec.obs_index.iter().max().map_or(0, |m| m + 1);
    FieldData::new(x, y, spec.obs_index.clone(), max_index)
}

/// Ensemble, field data and hold-out set for one ball-drop study.
#[derive(Clone, Debug)]
pub struct BallDropStudy {
    pub ensemble: Ensemble,
    pub field: Option<FieldData>,
    /// Hold-out inputs on the unit scale: full inputs for emulation studies,
    /// controllable inputs only for calibration studies.
    pub test_x: DMatrix<f64>,
    /// Noise-free truth at the hold-out inputs, `d_out x k` raw units (rows
    /// follow the field's `obs_index` for calibration studies).
    pub test_truth: DMatrix<f64>,
    /// Distance of each ensemble functional index.
    pub distances: Vec<f64>,
    /// Number of calibration inputs (trailing design columns).
    pub t_dim: usize,
    /// Data-generating calibration parameters on the unit scale.
    pub theta_true: Option<Vec<f64>>,
}

/// Field observation noise standard deviation used by the presets.
pub const FIELD_NOISE_SD: f64 = 0.1;

fn unbiased_ranges() -> Vec<InputRange> {
    vec![InputRange::new("R", 0.025, 0.3), InputRange::new("C", 0.05, 0.15)]
}

fn emulation_distances() -> Vec<f64> {
    (1..=25).map(|d| d as f64).collect()
}

fn simulate_design(
    x: &DMatrix<f64>,
    ranges: &[InputRange],
    distances: &[f64],
    variant: BallDropVariant,
    g: impl Fn(&[f64]) -> f64,
) -> Result<DMatrix<f64>> {
    let raw = from_unit_hypercube(x, ranges)?;
    let mut z = DMatrix::zeros(distances.len(), x.nrows());
    for i in 0..x.nrows() {
        let row: Vec<f64> = raw.row(i).iter().copied().collect();
        let y = ball_drop(row[1], row[0], g(&row), distances, variant)?;
        z.set_column(i, &DVector::from_vec(y));
    }
    Ok(z)
}

/// Emulation study: `(R, C)` over `[.025,.3] x [.05,.15]`, outputs at
/// 1..25 m, hold-out on a regular 10x10 grid.
pub fn emulation_study<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<BallDropStudy> {
    let ranges = unbiased_ranges();
    let distances = emulation_distances();
    let x = lhs_design(m, 2, rng);
    let z = simulate_design(&x, &ranges, &distances, BallDropVariant::Unbiased, |_| GRAVITY)?;
    let grid = linspace(0.0, 1.0, 10);
    let test_x = DMatrix::from_fn(100, 2, |i, j| if j == 0 { grid[i / 10] } else { grid[i % 10] });
    let test_truth = simulate_design(&test_x, &ranges, &distances, BallDropVariant::Unbiased, |_| GRAVITY)?;
    Ok(BallDropStudy {
        ensemble: Ensemble::new(x, z, ranges)?,
        field: None,
        test_x,
        test_truth,
        distances,
        t_dim: 0,
        theta_true: None,
    })
}

/// Unbiased calibration study: the emulation ensemble with `C` as the
/// calibration input, five noisy field curves and 100 hold-out radii.
pub fn unbiased_calibration_study<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<BallDropStudy> {
    let ranges = unbiased_ranges();
    let distances = emulation_distances();
    let x = lhs_design(m, 2, rng);
    let z = simulate_design(&x, &ranges, &distances, BallDropVariant::Unbiased, |_| GRAVITY)?;
    let spec = FieldSpec::unbiased();
    let field = make_field_data(&spec, FIELD_NOISE_SD, rng)?;
    let test_r = linspace(0.025, 0.3, 100);
    let test_x = DMatrix::from_fn(100, 1, |i, _| ranges[0].to_unit(test_r[i]));
    let mut test_truth = DMatrix::zeros(spec.distances.len(), 100);
    for (i, &r) in test_r.iter().enumerate() {
        let y = ball_drop(spec.c, r, spec.g, &spec.distances, BallDropVariant::Unbiased)?;
        test_truth.set_column(i, &DVector::from_vec(y));
    }
    Ok(BallDropStudy {
        theta_true: Some(vec![ranges[1].to_unit(spec.c)]),
        ensemble: Ensemble::new(x, z, ranges)?,
        field: Some(field),
        test_x,
        test_truth,
        distances,
        t_dim: 1,
    })
}

/// Natural ranges of `(R, C, g)` for the biased study.
pub fn biased_ranges() -> Vec<InputRange> {
    vec![
        InputRange::new("R", 0.25, 1.75),
        InputRange::new("C", 0.1, 0.4),
        InputRange::new("g", 5.0, 15.0),
    ]
}

/// Biased calibration study: the simulator uses the `1/3` exponent, field
/// data come from the physical model, and both `C` and `g` are calibrated.
pub fn biased_calibration_study<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<BallDropStudy> {
    let ranges = biased_ranges();
    let distances = biased_distances();
    let x = lhs_design(m, 3, rng);
    let z = simulate_design(&x, &ranges, &distances, BallDropVariant::Biased, |row| row[2])?;
    let spec = FieldSpec::biased();
    let field = make_field_data(&spec, FIELD_NOISE_SD, rng)?;
    let test_r = linspace(0.3, 1.7, 100);
    let test_x = DMatrix::from_fn(100, 1, |i, _| ranges[0].to_unit(test_r[i]));
    let mut test_truth = DMatrix::zeros(distances.len(), 100);
    for (i, &r) in test_r.iter().enumerate() {
        let y = ball_drop(spec.c, r, spec.g, &distances, BallDropVariant::Unbiased)?;
        test_truth.set_column(i, &DVector::from_vec(y));
    }
    Ok(BallDropStudy {
        theta_true: Some(vec![ranges[1].to_unit(spec.c), ranges[2].to_unit(spec.g)]),
        ensemble: Ensemble::new(x, z, ranges)?,
        field: Some(field),
        test_x,
        test_truth,
        distances,
        t_dim: 2,
    })
}

/// Header names for the distance-indexed outputs (`d1`, `d2.5`, ...).
pub fn distance_names(distances: &[f64]) -> Vec<String> {
    distances.iter().map(|d| format!("d{d}")).collect()
}

/// Generic column names `prefix1..prefixN`.
pub fn numbered_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| prefix.to_string() + &format!("{i}")).collect()
}
