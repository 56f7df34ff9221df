//! The emulator: a truncated basis for the functional output with one local
//! Student-t GP per basis weight, queried in its own scaled input space.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{rsvd_basis, svd_basis, BasisModel, BasisSelector, RsvdOptions};
use crate::dataset::{standardize, Ensemble, InputRange, Standardization};
use crate::error::{arg_err, shape_err};
use crate::gp::{
    estimate_lengthscales, sample_t, student_t_predict, Lengthscales, PredictiveT, SubsampleMethod, SubsampleSpec,
    DEFAULT_NUGGET,
};
use crate::knn::KdTree;
use crate::rng::{rng_for, stream};
use crate::Result;

/// Default neighbourhood size for prediction and calibration.
pub const DEFAULT_NEIGHBOURS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorConfig {
    pub basis: BasisSelector,
    /// Randomized SVD settings; needs a fixed-count `basis`.
    pub rsvd: Option<RsvdOptions>,
    pub per_index_scale: bool,
    /// Lengthscale subsampling; `None` picks [`default_subsample`].
    pub lengthscale: Option<SubsampleSpec>,
    pub nugget: f64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self { basis: BasisSelector::default(), rsvd: None, per_index_scale: false, lengthscale: None, nugget: DEFAULT_NUGGET }
    }
}

/// BLHS settings by ensemble size, backing off the division count until the
/// expected block holds enough points, and switching to stratified sampling
/// when no division count does.
pub fn default_subsample(m: usize, d: usize) -> SubsampleSpec {
    const TABLE: [(usize, usize); 6] = [(98, 2), (242, 4), (578, 8), (1058, 16), (5618, 50), (usize::MAX, 100)];
    let replicates = if m <= 1058 { 25 } else { 1 };
    let mut divisions = TABLE.iter().find(|(size, _)| m <= *size).map_or(100, |t| t.1);
    let need = (10 * (d + 2)) as f64;
    while divisions >= 2 && (m as f64) * (divisions as f64).powi(1 - d as i32) < need {
        divisions -= 1;
    }
    if divisions >= 2 {
        SubsampleSpec { method: SubsampleMethod::Blhs { divisions }, replicates }
    } else {
        SubsampleSpec { method: SubsampleMethod::Stratified { size: m.min(256) }, replicates: 25 }
    }
}

/// Coordinatewise `x / sqrt(l)`.
pub fn scale_input(x: &[f64], l: &Lengthscales) -> Result<Vec<f64>> {
    if x.len() != l.len() {
        return Err(shape_err!("input of length {} for {} lengthscales", x.len(), l.len()));
    }
    Ok(x.iter().zip(l.as_slice()).map(|(v, s)| v / s.sqrt()).collect())
}

/// One basis weight's GP: lengthscales, stretched design and its k-d tree.
#[derive(Clone, Debug)]
pub struct ComponentModel {
    pub lengthscales: Lengthscales,
    /// `M x d`, column `k` is the design column divided by `sqrt(l_k)`.
    pub x_sc: DMatrix<f64>,
    pub w: DVector<f64>,
    index: KdTree,
}

impl ComponentModel {
    pub fn new(x: &DMatrix<f64>, w: DVector<f64>, lengthscales: Lengthscales) -> Result<Self> {
        if x.ncols() != lengthscales.len() || x.nrows() != w.len() {
            return Err(shape_err!(
                "{}x{} design, {} weights, {} lengthscales",
                x.nrows(),
                x.ncols(),
                w.len(),
                lengthscales.len()
            ));
        }
        let l = lengthscales.as_slice();
        let x_sc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| x[(i, k)] / l[k].sqrt());
        let index = KdTree::new(&x_sc);
        Ok(Self { lengthscales, x_sc, w, index })
    }

    /// Indices and scaled distances of the `m` nearest design points.
    pub fn nn_query(&self, x_sc: &[f64], m: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        self.index.nearest(x_sc, m)
    }

    pub fn predict(&self, x: &[f64], m: usize, nugget: f64) -> Result<PredictiveT> {
        let q = scale_input(x, &self.lengthscales)?;
        let (idx, _) = self.nn_query(&q, m)?;
        let x_nn = DMatrix::from_fn(m, q.len(), |i, k| self.x_sc[(idx[i], k)]);
        let w_nn = DVector::from_fn(m, |i, _| self.w[idx[i]]);
        student_t_predict(&x_nn, &w_nn, &q, nugget)
    }
}

/// Anything that yields independent predictive laws for the basis weights.
pub trait WeightEmulator: Sync {
    fn basis(&self) -> &BasisModel;
    fn standardization(&self) -> &Standardization;
    fn input_dim(&self) -> usize;
    /// Predictive law of every weight at `x` (unit scale, full input vector)
    /// from `m` neighbours.
    fn predict_weights(&self, x: &[f64], m: usize) -> Result<Vec<PredictiveT>>;
}

/// Functional prediction in raw output units.
#[derive(Clone, Debug)]
pub struct FunctionalPrediction {
    pub mean: DVector<f64>,
    /// `d_y x S` sampled curves, when requested.
    pub samples: Option<DMatrix<f64>>,
    pub weights: Vec<PredictiveT>,
}

#[derive(Clone, Debug)]
pub struct FlaGPModel {
    /// `M x d` unit-scale design.
    pub design: DMatrix<f64>,
    pub input_ranges: Vec<InputRange>,
    pub basis: BasisModel,
    pub standardization: Standardization,
    pub components: Vec<ComponentModel>,
    pub config: EmulatorConfig,
}

/// Standardizes the outputs and builds the basis.
pub fn fit_basis(ensemble: &Ensemble, config: &EmulatorConfig, seed: u64) -> Result<(BasisModel, Standardization)> {
    let (z, st) = standardize(&ensemble.z_raw, config.per_index_scale)?;
    let basis = match config.rsvd {
        None => svd_basis(&z, config.basis)?,
        Some(opts) => match config.basis {
            BasisSelector::Count(p) => rsvd_basis(&z, p, opts, &mut rng_for(seed, &[stream::FIT, u64::MAX]))?,
            BasisSelector::MinVarFrac(_) => {
                return Err(arg_err!("the randomized SVD needs a fixed basis size"));
            }
        },
    };
    Ok((basis, st))
}

/// Lengthscales of component `j`, on its own random substream.
pub fn fit_component(design: &DMatrix<f64>, basis: &BasisModel, config: &EmulatorConfig, seed: u64, j: usize) -> Result<Lengthscales> {
    let w = basis.w.row(j).transpose();
    let spec = config.lengthscale.unwrap_or_else(|| default_subsample(design.nrows(), design.ncols()));
    estimate_lengthscales(design, &w, &spec, config.nugget, &mut rng_for(seed, &[stream::FIT, j as u64]))
}

/// Fits basis and every component sequentially.
pub fn fit(ensemble: &Ensemble, config: &EmulatorConfig, seed: u64) -> Result<FlaGPModel> {
    if ensemble.n_runs() < 2 {
        return Err(arg_err!("need at least 2 runs, got {}", ensemble.n_runs()));
    }
    let (basis, st) = fit_basis(ensemble, config, seed)?;
    let ls = (0..basis.p())
        .map(|j| fit_component(&ensemble.x, &basis, config, seed, j))
        .collect::<Result<Vec<_>>>()?;
    FlaGPModel::from_parts(ensemble.x.clone(), ensemble.input_ranges.clone(), basis, st, ls, config.clone())
}

impl FlaGPModel {
    pub fn from_parts(
        design: DMatrix<f64>,
        input_ranges: Vec<InputRange>,
        basis: BasisModel,
        standardization: Standardization,
        lengthscales: Vec<Lengthscales>,
        config: EmulatorConfig,
    ) -> Result<Self> {
        if lengthscales.len() != basis.p() {
            return Err(shape_err!("{} lengthscale sets for {} components", lengthscales.len(), basis.p()));
        }
        if basis.n_runs() != design.nrows() || basis.n_outputs() != standardization.n_outputs() {
            return Err(shape_err!("basis does not match the design or the standardization"));
        }
        if input_ranges.len() != design.ncols() {
            return Err(shape_err!("{} ranges for {} inputs", input_ranges.len(), design.ncols()));
        }
        let components = lengthscales
            .into_iter()
            .enumerate()
            .map(|(j, l)| ComponentModel::new(&design, basis.w.row(j).transpose(), l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { design, input_ranges, basis, standardization, components, config })
    }

    pub fn n_runs(&self) -> usize {
        self.design.nrows()
    }

    pub fn lengthscales(&self) -> Vec<&Lengthscales> {
        self.components.iter().map(|c| &c.lengthscales).collect()
    }

    fn check_query(&self, x: &[f64], m: usize) -> Result<()> {
        if x.len() != self.design.ncols() {
            return Err(shape_err!("input of length {} for a {}-input model", x.len(), self.design.ncols()));
        }
        if m < 2 || m > self.n_runs() {
            return Err(arg_err!("neighbourhood size {m} outside 2..={}", self.n_runs()));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            log::warn!("prediction input {x:?} lies outside the unit hypercube");
        }
        Ok(())
    }

    /// Functional prediction at `x` (unit scale) from `m` neighbours, with
    /// `n_samples` sampled curves.
    pub fn predict<R: Rng + ?Sized>(&self, x: &[f64], m: usize, n_samples: usize, rng: &mut R) -> Result<FunctionalPrediction> {
        let weights = self.predict_weights(x, m)?;
        let mu = DVector::from_iterator(weights.len(), weights.iter().map(|p| p.mean));
        let mean_std = &self.basis.b * mu;
        let mean = self.unstandardize_column(&mean_std);
        let samples = (n_samples > 0).then(|| {
            let draws = DMatrix::from_fn(weights.len(), n_samples, |j, _| sample_t(&weights[j], rng));
            let z = &self.basis.b * draws;
            let mut out = z;
            for s in 0..n_samples {
                let col = self.unstandardize_column(&out.column(s).into_owned());
                out.set_column(s, &col);
            }
            out
        });
        Ok(FunctionalPrediction { mean, samples, weights })
    }

    fn unstandardize_column(&self, z: &DVector<f64>) -> DVector<f64> {
        let st = &self.standardization;
        DVector::from_fn(z.len(), |i, _| z[i] * st.scale_at(i) + st.mean[i])
    }
}

impl WeightEmulator for FlaGPModel {
    fn basis(&self) -> &BasisModel {
        &self.basis
    }

    fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    fn input_dim(&self) -> usize {
        self.design.ncols()
    }

    fn predict_weights(&self, x: &[f64], m: usize) -> Result<Vec<PredictiveT>> {
        self.check_query(x, m)?;
        self.components.iter().map(|c| c.predict(x, m, self.config.nugget)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{emulation_study, unstandardize};
    use crate::gp::corr_matrix;
    use crate::linalg::cholesky;
    use alloc::vec;

    fn small_model(m_runs: usize, seed: u64) -> (FlaGPModel, Ensemble) {
        let study = emulation_study(m_runs, &mut rng_for(seed, &[])).unwrap();
        let model = fit(&study.ensemble, &EmulatorConfig::default(), seed).unwrap();
        (model, study.ensemble)
    }

    #[test]
    fn default_subsample_table() {
        assert_eq!(default_subsample(242, 2).method, SubsampleMethod::Blhs { divisions: 4 });
        assert_eq!(default_subsample(578, 2).method, SubsampleMethod::Blhs { divisions: 8 });
        assert_eq!(default_subsample(1058, 2).replicates, 25);
        // 16 divisions in 3-d would leave ~4 points per block
        let three = default_subsample(1058, 3);
        match three.method {
            SubsampleMethod::Blhs { divisions } => assert!(1058.0 / (divisions * divisions) as f64 >= 50.0),
            _ => panic!("expected blhs"),
        }
        assert!(matches!(default_subsample(1000, 11).method, SubsampleMethod::Stratified { size: 256 }));
    }

    #[test]
    fn scale_input_basics() {
        let l = Lengthscales::new(vec![1.0, 4.0]).unwrap();
        assert_eq!(scale_input(&[0.3, 0.8], &l).unwrap(), vec![0.3, 0.4]);
        assert!(scale_input(&[0.3], &l).is_err());
    }

    #[test]
    fn scaled_columns_match_lengthscales() {
        let (model, ens) = small_model(98, 1);
        for c in &model.components {
            for k in 0..2 {
                let s = c.lengthscales.as_slice()[k].sqrt();
                for i in 0..ens.n_runs() {
                    assert!((c.x_sc[(i, k)] - ens.x[(i, k)] / s).abs() <= 1e-12 * (1.0 + c.x_sc[(i, k)].abs()));
                }
            }
        }
    }

    #[test]
    fn ball_drop_basis_is_small() {
        let (model, _) = small_model(242, 2);
        assert!((1..=3).contains(&model.basis.p()), "p = {}", model.basis.p());
    }

    #[test]
    fn fit_is_deterministic() {
        let (a, _) = small_model(98, 3);
        let (b, _) = small_model(98, 3);
        assert_eq!(a.lengthscales(), b.lengthscales());
    }

    #[test]
    fn interpolates_training_runs() {
        let (model, ens) = small_model(98, 4);
        let truncated = unstandardize(&model.basis.reconstruct(&model.basis.w).unwrap(), &model.standardization).unwrap();
        let mut rng = rng_for(0, &[]);
        for i in [0, 17, 50] {
            let x: Vec<f64> = ens.x.row(i).iter().copied().collect();
            let p = model.predict(&x, 10, 0, &mut rng).unwrap();
            let target = truncated.column(i);
            let rel = (&p.mean - target).norm() / target.norm();
            assert!(rel < 1e-4, "run {i}: {rel}");
        }
    }

    #[test]
    fn all_neighbours_equals_dense_gp() {
        let (model, ens) = small_model(98, 5);
        let m = ens.n_runs();
        let x = [0.37, 0.61];
        let p = model.predict_weights(&x, m).unwrap();
        for (j, c) in model.components.iter().enumerate() {
            let k = corr_matrix(&ens.x, &ens.x, &c.lengthscales, model.config.nugget).unwrap();
            let chol = cholesky(k, "test").unwrap();
            let w = model.basis.w.row(j).transpose();
            let alpha = chol.solve(&w);
            let q = DMatrix::from_row_slice(1, 2, &x);
            let cvec = crate::gp::cross_corr(&ens.x, &q, &c.lengthscales).unwrap().column(0).into_owned();
            let mean = cvec.dot(&alpha);
            let psi = w.dot(&alpha);
            let quad = cvec.dot(&chol.solve(&cvec));
            let scale2 = (psi / m as f64 * (1.0 - quad)).max(0.0);
            assert!((p[j].mean - mean).abs() < 1e-10 * (1.0 + mean.abs()), "{} vs {}", p[j].mean, mean);
            assert!((p[j].scale2 - scale2).abs() < 1e-10 * (1.0 + scale2), "{} vs {}", p[j].scale2, scale2);
        }
    }

    #[test]
    fn permuting_components_keeps_mean() {
        let (model, _) = small_model(98, 6);
        let x = [0.2, 0.9];
        let mut rng = rng_for(0, &[]);
        let base = model.predict(&x, 20, 0, &mut rng).unwrap().mean;
        let p = model.basis.p();
        let perm: Vec<usize> = (0..p).rev().collect();
        let mut basis = model.basis.clone();
        basis.b = DMatrix::from_fn(basis.b.nrows(), p, |i, j| model.basis.b[(i, perm[j])]);
        basis.w = DMatrix::from_fn(p, basis.w.ncols(), |j, i| model.basis.w[(perm[j], i)]);
        let ls = perm.iter().map(|&j| model.components[j].lengthscales.clone()).collect();
        let swapped = FlaGPModel::from_parts(
            model.design.clone(),
            model.input_ranges.clone(),
            basis,
            model.standardization.clone(),
            ls,
            model.config.clone(),
        )
        .unwrap();
        let other = swapped.predict(&x, 20, 0, &mut rng).unwrap().mean;
        assert!((base - other).amax() < 1e-12);
    }

    #[test]
    fn sample_mean_converges() {
        let (model, _) = small_model(98, 7);
        let mut rng = rng_for(8, &[]);
        let s = 10_000;
        let p = model.predict(&[0.43, 0.21], 10, s, &mut rng).unwrap();
        let samples = p.samples.unwrap();
        for i in 0..samples.nrows() {
            let row = samples.row(i);
            let mean = row.mean();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
            assert!((mean - p.mean[i]).abs() <= 4.0 * (var / s as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn query_errors() {
        let (model, _) = small_model(98, 9);
        let mut rng = rng_for(0, &[]);
        assert!(model.predict(&[0.5, 0.5], 1, 0, &mut rng).is_err());
        assert!(model.predict(&[0.5, 0.5], 99, 0, &mut rng).is_err());
        assert!(model.predict(&[0.5], 10, 0, &mut rng).is_err());
        // outside the cube only warns
        assert!(model.predict(&[1.2, 0.5], 10, 0, &mut rng).is_ok());
    }

    #[test]
    fn rsvd_needs_count() {
        let study = emulation_study(98, &mut rng_for(1, &[])).unwrap();
        let cfg = EmulatorConfig { rsvd: Some(RsvdOptions::default()), ..Default::default() };
        assert!(fit(&study.ensemble, &cfg, 1).is_err());
        let cfg = EmulatorConfig { rsvd: Some(RsvdOptions { oversample: 5, power_iters: 2 }), basis: BasisSelector::Count(2), ..Default::default() };
        assert_eq!(fit(&study.ensemble, &cfg, 1).unwrap().basis.p(), 2);
    }
}
