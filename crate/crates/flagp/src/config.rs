//! Run configuration read from JSON. Every field has a default, so `{}` is a
//! valid config.

use std::path::{Path, PathBuf};

use flagp_core::basis::{BasisSelector, RsvdOptions};
use flagp_core::calibration::{SigmaPrior, DEFAULT_PREDICTION_DRAWS};
use flagp_core::emulator::{EmulatorConfig, DEFAULT_NEIGHBOURS};
use flagp_core::gp::{SubsampleMethod, SubsampleSpec, DEFAULT_NUGGET};
use flagp_core::map::DEFAULT_RESTARTS;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub basis: BasisConfig,
    /// Scale every functional index to unit variance instead of one global scale.
    pub per_index_scale: bool,
    /// Lengthscale subsampling; omitted means a size-dependent default.
    pub lengthscale: Option<LengthscaleConfig>,
    pub nugget: f64,
    pub emulator: EmulatorSection,
    pub calibration: CalibrationSection,
    pub map: MapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            basis: BasisConfig::default(),
            per_index_scale: false,
            lengthscale: None,
            nugget: DEFAULT_NUGGET,
            emulator: EmulatorSection::default(),
            calibration: CalibrationSection::default(),
            map: MapSection::default(),
        }
    }
}

/// Either `min_var_frac` or `p`; neither means `min_var_frac = 0.95`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub min_var_frac: Option<f64>,
    pub p: Option<usize>,
    pub rsvd: Option<RsvdOptions>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthscaleConfig {
    /// `d_est` blocks per coordinate, `r_est` bootstrap replicates.
    Blhs { d_est: usize, r_est: usize },
    /// `m_est` points per replicate.
    Stratified { m_est: usize, r_est: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorSection {
    /// Neighbourhood size for prediction.
    pub m: usize,
    /// Sampled curves per prediction, used for the quantiles.
    pub samples: usize,
}

impl Default for EmulatorSection {
    fn default() -> Self {
        Self { m: DEFAULT_NEIGHBOURS, samples: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Ig { alpha: f64, beta: f64 },
    HalfCauchy { scale: f64 },
}

impl PriorConfig {
    pub fn to_prior(self) -> SigmaPrior {
        match self {
            PriorConfig::Ig { alpha, beta } => SigmaPrior::InverseGamma { alpha, beta },
            PriorConfig::HalfCauchy { scale } => SigmaPrior::HalfCauchy { scale },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyConfig {
    None,
    /// Intercept and slope over the output locations.
    Linear,
    /// CSV with one row per observed output and one column per basis function.
    BasisFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Number of trailing model inputs that are calibration parameters.
    pub t_dim: usize,
    pub m_c: usize,
    pub n_samples: usize,
    pub n_burn: usize,
    pub prior_sigma2: PriorConfig,
    pub discrepancy: DiscrepancyConfig,
    /// Fixed discrepancy nugget; omitted means estimated.
    pub discrepancy_nugget: Option<f64>,
    pub refit_every: usize,
    pub prediction_draws: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            t_dim: 1,
            m_c: DEFAULT_NEIGHBOURS,
            n_samples: 1500,
            n_burn: 500,
            prior_sigma2: PriorConfig::Ig { alpha: 1.0, beta: 0.001 },
            discrepancy: DiscrepancyConfig::None,
            discrepancy_nugget: None,
            refit_every: 1,
            prediction_draws: DEFAULT_PREDICTION_DRAWS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub restarts: usize,
}

impl Default for MapSection {
    fn default() -> Self {
        Self { restarts: DEFAULT_RESTARTS }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(bad(format!("{name} must be positive")));
    }
    Ok(())
}

impl RunConfig {
    /// Reads and validates a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        match (self.basis.min_var_frac, self.basis.p) {
            (Some(_), Some(_)) => return Err(bad("basis: give min_var_frac or p, not both")),
            (Some(f), None) if !(f > 0.0 && f <= 1.0) => return Err(bad(format!("basis.min_var_frac {f} outside (0, 1]"))),
            (None, Some(p)) => positive("basis.p", p)?,
            _ => {}
        }
        if let Some(r) = self.basis.rsvd {
            if self.basis.p.is_none() {
                return Err(bad("basis.rsvd needs a fixed basis.p"));
            }
            positive("basis.rsvd.oversample", r.oversample)?;
        }
        match self.lengthscale {
            Some(LengthscaleConfig::Blhs { d_est, r_est }) => {
                if d_est < 2 {
                    return Err(bad("lengthscale.d_est must be at least 2"));
                }
                positive("lengthscale.r_est", r_est)?;
            }
            Some(LengthscaleConfig::Stratified { m_est, r_est }) => {
                positive("lengthscale.m_est", m_est)?;
                positive("lengthscale.r_est", r_est)?;
            }
            None => {}
        }
        if !(self.nugget > 0.0 && self.nugget.is_finite()) {
            return Err(bad(format!("nugget {} must be positive", self.nugget)));
        }
        if self.emulator.m < 2 {
            return Err(bad("emulator.m must be at least 2"));
        }
        let c = &self.calibration;
        positive("calibration.t_dim", c.t_dim)?;
        if c.m_c < 2 {
            return Err(bad("calibration.m_c must be at least 2"));
        }
        positive("calibration.n_samples", c.n_samples)?;
        if c.n_burn >= c.n_samples {
            return Err(bad("calibration.n_burn must be below n_samples"));
        }
        positive("calibration.refit_every", c.refit_every)?;
        positive("calibration.prediction_draws", c.prediction_draws)?;
        if let Some(g) = c.discrepancy_nugget {
            if !(g > 0.0) {
                return Err(bad("calibration.discrepancy_nugget must be positive"));
            }
        }
        c.prior_sigma2.to_prior().validate().map_err(|e| bad(e.to_string()))?;
        positive("map.restarts", self.map.restarts)?;
        Ok(())
    }

    pub fn emulator_config(&self) -> EmulatorConfig {
        let basis = match self.basis.p {
            Some(p) => BasisSelector::Count(p),
            None => BasisSelector::MinVarFrac(self.basis.min_var_frac.unwrap_or(0.95)),
        };
        let lengthscale = self.lengthscale.map(|l| match l {
            LengthscaleConfig::Blhs { d_est, r_est } => {
                SubsampleSpec { method: SubsampleMethod::Blhs { divisions: d_est }, replicates: r_est }
            }
            LengthscaleConfig::Stratified { m_est, r_est } => {
                SubsampleSpec { method: SubsampleMethod::Stratified { size: m_est }, replicates: r_est }
            }
        });
        EmulatorConfig { basis, rsvd: self.basis.rsvd, per_index_scale: self.per_index_scale, lengthscale, nugget: self.nugget }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.emulator_config(), EmulatorConfig::default());
    }

    #[test]
    fn parses_every_section() {
        let text = r#"{
            "seed": 7,
            "basis": {"p": 3, "rsvd": {"oversample": 10, "power_iters": 2}},
            "lengthscale": {"method": "stratified", "m_est": 100, "r_est": 5},
            "emulator": {"m": 25},
            "calibration": {"t_dim": 2, "prior_sigma2": {"half_cauchy": {"scale": 0.5}},
                            "discrepancy": {"basis_file": "k.csv"}, "n_samples": 100, "n_burn": 10},
            "map": {"restarts": 3}
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        let e = cfg.emulator_config();
        assert_eq!(e.basis, BasisSelector::Count(3));
        assert_eq!(e.lengthscale.unwrap().method, SubsampleMethod::Stratified { size: 100 });
        assert_eq!(cfg.calibration.discrepancy, DiscrepancyConfig::BasisFile("k.csv".into()));
        assert_eq!(cfg.calibration.prior_sigma2.to_prior(), SigmaPrior::HalfCauchy { scale: 0.5 });
        let linear: CalibrationSection = serde_json::from_str(r#"{"discrepancy": "linear"}"#).unwrap();
        assert_eq!(linear.discrepancy, DiscrepancyConfig::Linear);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"basis": {"min_var_frac": 1.5}}"#,
            r#"{"basis": {"min_var_frac": 0.9, "p": 2}}"#,
            r#"{"basis": {"rsvd": {"oversample": 10, "power_iters": 2}}}"#,
            r#"{"emulator": {"m": 1}}"#,
            r#"{"calibration": {"n_samples": 10, "n_burn": 10}}"#,
            r#"{"calibration": {"prior_sigma2": {"ig": {"alpha": -1, "beta": 1}}}}"#,
            r#"{"map": {"restarts": 0}}"#,
            r#"{"lengthscale": {"method": "blhs", "d_est": 1, "r_est": 2}}"#,
        ] {
            let cfg: RunConfig = serde_json::from_str(text).unwrap();
            assert!(matches!(cfg.validate(), Err(CliError::Config(_))), "{text}");
        }
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
