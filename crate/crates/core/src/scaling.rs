//! The two prediction paths compared by the input-scaling benchmark:
//! neighbours in a prescaled space with fixed global lengthscales, and
//! neighbours in the raw unit space with lengthscales re-estimated for every
//! prediction.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::emulator::ComponentModel;
use crate::gp::{fit_map_lengthscales, student_t_predict, GammaPrior, Lengthscales, PredictiveT};
use crate::knn::KdTree;
use crate::Result;

/// Synthetic benchmark data: uniform design and a smooth anisotropic response.
pub fn synthetic_problem<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>());
    let w = DVector::from_fn(m, |i, _| (0..d).map(|k| ((k + 1) as f64 * x[(i, k)]).sin() / (k + 1) as f64).sum());
    (x, w)
}

/// Fixed-lengthscale path.
pub struct PrescaledPredictor {
    component: ComponentModel,
    nugget: f64,
}

impl PrescaledPredictor {
    pub fn new(x: &DMatrix<f64>, w: DVector<f64>, lengthscales: Lengthscales, nugget: f64) -> Result<Self> {
        Ok(Self { component: ComponentModel::new(x, w, lengthscales)?, nugget })
    }

    pub fn predict(&self, x: &[f64], m: usize) -> Result<PredictiveT> {
        self.component.predict(x, m, self.nugget)
    }
}

/// Re-estimation path: nearest neighbours in the unit space, then a
/// single-start MAP lengthscale fit on the neighbourhood before predicting.
pub struct ReestimatingPredictor {
    x: DMatrix<f64>,
    w: DVector<f64>,
    index: KdTree,
    nugget: f64,
}

impl ReestimatingPredictor {
    pub fn new(x: DMatrix<f64>, w: DVector<f64>, nugget: f64) -> Self {
        let index = KdTree::new(&x);
        Self { x, w, index, nugget }
    }

    pub fn predict<R: Rng + ?Sized>(&self, x: &[f64], m: usize, rng: &mut R) -> Result<PredictiveT> {
        let (idx, _) = self.index.nearest(x, m)?;
        let d = x.len();
        let x_nn = DMatrix::from_fn(m, d, |i, k| self.x[(idx[i], k)]);
        let w_nn = DVector::from_fn(m, |i, _| self.w[idx[i]]);
        let l = fit_map_lengthscales(&x_nn, &w_nn, self.nugget, GammaPrior::from_design(&x_nn), 1, rng)?;
        let s: Vec<f64> = l.as_slice().iter().map(|v| v.sqrt()).collect();
        let x_sc = DMatrix::from_fn(m, d, |i, k| x_nn[(i, k)] / s[k]);
        let q: Vec<f64> = x.iter().zip(&s).map(|(v, sk)| v / sk).collect();
        student_t_predict(&x_sc, &w_nn, &q, self.nugget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::DEFAULT_NUGGET;
    use crate::rng::rng_for;

    #[test]
    fn both_paths_predict_the_response() {
        let mut rng = rng_for(1, &[]);
        let (x, w) = synthetic_problem(2000, 3, &mut rng);
        let l = Lengthscales::new(alloc::vec![0.5, 0.5, 0.5]).unwrap();
        let fixed = PrescaledPredictor::new(&x, w.clone(), l, DEFAULT_NUGGET).unwrap();
        let local = ReestimatingPredictor::new(x, w, DEFAULT_NUGGET);
        let q = [0.3, 0.6, 0.5];
        let truth: f64 = (0..3).map(|k| ((k + 1) as f64 * q[k]).sin() / (k + 1) as f64).sum();
        let a = fixed.predict(&q, 30).unwrap();
        let b = local.predict(&q, 30, &mut rng).unwrap();
        assert!((a.mean - truth).abs() < 1e-3, "{} vs {truth}", a.mean);
        assert!((b.mean - truth).abs() < 1e-3, "{} vs {truth}", b.mean);
    }
}
