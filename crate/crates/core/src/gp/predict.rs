#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use super::kernel::scaled_corr;
use crate::error::{arg_err, shape_err};
use crate::linalg::cholesky;
use crate::Result;

/// Student-t predictive law of one basis weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveT {
    pub mean: f64,
    /// Squared scale.
    pub scale2: f64,
    /// Degrees of freedom (the neighbourhood size).
    pub df: usize,
}

impl PredictiveT {
    /// Variance of the t law (requires `df > 2`).
    pub fn variance(&self) -> Option<f64> {
        (self.df > 2).then(|| self.scale2 * self.df as f64 / (self.df as f64 - 2.0))
    }
}

/// Local GP prediction on pre-scaled inputs with an isotropic unit-lengthscale
/// Gaussian kernel: mean `c^T C^-1 w`, squared scale
/// `(psi/m) (1 - c^T C^-1 c)` with `psi = w^T C^-1 w`, and `m` degrees of
/// freedom.
pub fn student_t_predict(x_nn: &DMatrix<f64>, w_nn: &DVector<f64>, x_sc: &[f64], nugget: f64) -> Result<PredictiveT> {
    let (m, d) = x_nn.shape();
    if m < 2 {
        return Err(arg_err!("prediction needs at least 2 neighbours, got {m}"));
    }
    if w_nn.len() != m || x_sc.len() != d {
        return Err(shape_err!("{m}x{d} neighbours, {} weights, query of length {}", w_nn.len(), x_sc.len()));
    }
    let chol = cholesky(scaled_corr(x_nn, nugget), "local correlation matrix")?;
    let alpha = chol.solve(w_nn);
    let psi = w_nn.dot(&alpha);
    let c = DVector::from_fn(m, |i, _| {
        let s: f64 = (0..d).map(|k| (x_nn[(i, k)] - x_sc[k]).powi(2)).sum();
        (-s).exp()
    });
    let mean = c.dot(&alpha);
    let mut v = c;
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let scale2 = (psi / m as f64 * (1.0 - v.norm_squared())).max(0.0);
    Ok(PredictiveT { mean, scale2, df: m })
}

/// One draw `mean + sqrt(scale2) * t_df`.
pub fn sample_t<R: Rng + ?Sized>(pred: &PredictiveT, rng: &mut R) -> f64 {
    let t = StudentT::new(pred.df.max(1) as f64).expect("df >= 1").sample(rng);
    pred.mean + pred.scale2.sqrt() * t
}
