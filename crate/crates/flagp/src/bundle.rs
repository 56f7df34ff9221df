//! The `flagp-v1` model bundle.
//!
//! Layout: the 8-byte magic `FLAGPv1\n`, the manifest length as a
//! little-endian `u64`, the JSON manifest, then every array as little-endian
//! `f64` values in column-major order. The manifest records each array's
//! shape and its offset (in values) into the blob section.

use std::collections::BTreeMap;
use std::path::Path;

use flagp_core::basis::BasisModel;
use flagp_core::dataset::{InputRange, Scale, Standardization};
use flagp_core::emulator::{EmulatorConfig, FlaGPModel};
use flagp_core::gp::Lengthscales;
use flagp_core::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"FLAGPv1\n";
pub const FORMAT: &str = "flagp-v1";

/// A fitted emulator plus the output column names it was trained on.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub model: FlaGPModel,
    pub output_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayRef {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub input_ranges: Vec<InputRange>,
    pub output_names: Vec<String>,
    pub per_index_scale: bool,
    pub var_explained: f64,
    pub config: EmulatorConfig,
    pub arrays: BTreeMap<String, ArrayRef>,
}

#[derive(Default)]
struct Blobs {
    data: Vec<f64>,
    refs: BTreeMap<String, ArrayRef>,
}

impl Blobs {
    fn push(&mut self, name: &str, m: &DMatrix<f64>) {
        let r = ArrayRef { rows: m.nrows(), cols: m.ncols(), offset: self.data.len() };
        self.data.extend_from_slice(m.as_slice());
        self.refs.insert(name.to_string(), r);
    }

    fn push_vec(&mut self, name: &str, v: &[f64]) {
        self.push(name, &DMatrix::from_column_slice(v.len(), 1, v));
    }
}

fn corrupt(msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("corrupt model bundle: {msg}"))
}

impl Bundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut blobs = Blobs::default();
        blobs.push("design", &m.design);
        blobs.push("basis_b", &m.basis.b);
        blobs.push("basis_w", &m.basis.w);
        blobs.push_vec("singular_values", &m.basis.singular_values);
        blobs.push_vec("output_mean", &m.standardization.mean);
        let (per_index, scale) = match &m.standardization.scale {
            Scale::Global(s) => (false, vec![*s]),
            Scale::PerIndex(s) => (true, s.clone()),
        };
        blobs.push_vec("output_scale", &scale);
        for (j, c) in m.components.iter().enumerate() {
            blobs.push_vec(&format!("lengthscales_{j}"), c.lengthscales.as_slice());
        }
        let manifest = BundleManifest {
            format: FORMAT.to_string(),
            input_ranges: m.input_ranges.clone(),
            output_names: self.output_names.clone(),
            per_index_scale: per_index,
            var_explained: m.basis.var_explained,
            config: m.config.clone(),
            arrays: blobs.refs,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * blobs.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &blobs.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| corrupt("truncated manifest"))?;
        let manifest: BundleManifest = serde_json::from_slice(body).map_err(corrupt)?;
        if manifest.format != FORMAT {
            return Err(corrupt(format!("unsupported format {:?}", manifest.format)));
        }
        let blob = &bytes[16 + len..];
        if blob.len() % 8 != 0 {
            return Err(corrupt("blob section is not a whole number of floats"));
        }
        let data: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let get = |name: &str| -> CliResult<DMatrix<f64>> {
            let r = manifest.arrays.get(name).ok_or_else(|| corrupt(format!("missing array {name}")))?;
            let end = r.offset + r.rows * r.cols;
            let slice = data.get(r.offset..end).ok_or_else(|| corrupt(format!("array {name} out of bounds")))?;
            Ok(DMatrix::from_column_slice(r.rows, r.cols, slice))
        };
        let vec_of = |name: &str| -> CliResult<Vec<f64>> { Ok(get(name)?.as_slice().to_vec()) };

        let b = get("basis_b")?;
        let basis = BasisModel {
            w: get("basis_w")?,
            singular_values: vec_of("singular_values")?,
            var_explained: manifest.var_explained,
            b,
        };
        let scale = vec_of("output_scale")?;
        let scale = if manifest.per_index_scale {
            Scale::PerIndex(scale)
        } else {
            Scale::Global(*scale.first().ok_or_else(|| corrupt("empty output scale"))?)
        };
        let standardization = Standardization { mean: vec_of("output_mean")?, scale };
        let lengthscales = (0..basis.p())
            .map(|j| Lengthscales::new(vec_of(&format!("lengthscales_{j}"))?).map_err(corrupt))
            .collect::<CliResult<Vec<_>>>()?;
        if manifest.output_names.len() != standardization.n_outputs() {
            return Err(corrupt("output names do not match the outputs"));
        }
        let model = FlaGPModel::from_parts(
            get("design")?,
            manifest.input_ranges,
            basis,
            standardization,
            lengthscales,
            manifest.config,
        )
        .map_err(corrupt)?;
        Ok(Bundle { model, output_names: manifest.output_names })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
