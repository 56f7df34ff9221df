//! Gaussian-process building blocks: the separable Gaussian correlation,
//! the variance-marginalized likelihood with gamma lengthscale priors,
//! bootstrapped subsample estimation, and the closed-form Student-t
//! predictor used on pre-scaled inputs.

mod estimate;
mod kernel;
mod likelihood;
mod predict;

pub use estimate::{
    blhs_subsample, estimate_lengthscales, fit_map_lengthscales, stratified_subsample, SubsampleMethod,
    SubsampleSpec, LENGTHSCALE_BOUNDS, MAP_RESTARTS,
};
pub use kernel::{corr_matrix, cross_corr, scaled_corr};
pub use likelihood::{neg_log_marginal, neg_log_marginal_grad, GammaPrior, NlmlParts};
pub(crate) use likelihood::nlml_parts;
pub use predict::{sample_t, student_t_predict, PredictiveT};

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::arg_err;
use crate::Result;

/// Default nugget for emulator components.
pub const DEFAULT_NUGGET: f64 = 1e-7;

/// Per-dimension lengthscales `l` of `exp(-sum_k (x_k - x'_k)^2 / l_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Lengthscales(Vec<f64>);

impl Lengthscales {
    pub fn new(l: Vec<f64>) -> Result<Self> {
        if l.is_empty() {
            return Err(arg_err!("empty lengthscale vector"));
        }
        if let Some(v) = l.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(arg_err!("lengthscales must be positive and finite, got {v}"));
        }
        Ok(Self(l))
    }

    /// All-ones lengthscales (the isotropic kernel on scaled inputs).
    pub fn ones(d: usize) -> Self {
        Self(alloc::vec![1.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Lengthscales {
    type Error = crate::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Lengthscales> for Vec<f64> {
    fn from(l: Lengthscales) -> Self {
        l.0
    }
}
