//! Glue between files on disk and the numerical core.

use std::path::Path;

use flagp_core::dataset::{to_unit_hypercube, Ensemble, FieldData, InputRange};
use flagp_core::discrepancy::{DiscrepancySpec, NuggetMode};
use flagp_core::emulator::{fit_basis, fit_component, EmulatorConfig, FlaGPModel};
use flagp_core::DMatrix;
use rayon::prelude::*;

use crate::bundle::Bundle;
use crate::config::{CalibrationSection, DiscrepancyConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_table, Table};

/// Same result as [`flagp_core::emulator::fit`]; components are fitted in
/// parallel, each on its own random substream.
pub fn fit_parallel(ensemble: &Ensemble, config: &EmulatorConfig, seed: u64) -> CliResult<FlaGPModel> {
    if ensemble.n_runs() < 2 {
        return Err(CliError::Data(format!("need at least 2 runs, got {}", ensemble.n_runs())));
    }
    let (basis, st) = fit_basis(ensemble, config, seed)?;
    log::info!("basis: p = {}, variance explained {:.4}", basis.p(), basis.var_explained);
    let ls = (0..basis.p())
        .into_par_iter()
        .map(|j| fit_component(&ensemble.x, &basis, config, seed, j))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FlaGPModel::from_parts(ensemble.x.clone(), ensemble.input_ranges.clone(), basis, st, ls, config.clone())?)
}

/// Ensemble from row-per-run CSVs and a ranges file.
pub fn load_ensemble(inputs: &Table, outputs: &Table, ranges: Vec<InputRange>) -> CliResult<Ensemble> {
    if inputs.rows.nrows() != outputs.rows.nrows() {
        return Err(CliError::Data(format!(
            "{} input rows but {} output rows",
            inputs.rows.nrows(),
            outputs.rows.nrows()
        )));
    }
    check_names(inputs, &ranges)?;
    Ok(Ensemble::from_raw(&inputs.rows, outputs.rows.transpose(), ranges)?)
}

fn check_names(table: &Table, ranges: &[InputRange]) -> CliResult<()> {
    let names: Vec<&str> = ranges.iter().map(|r| r.name.as_str()).collect();
    if table.headers.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(CliError::Data(format!("input columns {:?} do not match the ranges {names:?}", table.headers)));
    }
    Ok(())
}

/// Unit-scale inputs for the first `table.ncols()` model inputs.
pub fn unit_inputs(table: &Table, ranges: &[InputRange]) -> CliResult<DMatrix<f64>> {
    let k = table.headers.len();
    if k > ranges.len() {
        return Err(CliError::Data(format!("{k} input columns for a {}-input model", ranges.len())));
    }
    check_names(table, &ranges[..k])?;
    Ok(to_unit_hypercube(&table.rows, &ranges[..k], false)?)
}

/// Field data whose output columns are matched to the model's outputs by name.
pub fn load_field(bundle: &Bundle, x_path: &Path, y_path: &Path) -> CliResult<FieldData> {
    let x_table = read_table(x_path)?;
    let y_table = read_table(y_path)?;
    if x_table.rows.nrows() != y_table.rows.nrows() {
        return Err(CliError::Data("field inputs and outputs have different row counts".into()));
    }
    let x = unit_inputs(&x_table, &bundle.model.input_ranges)?;
    let obs_index = y_table
        .headers
        .iter()
        .map(|h| {
            bundle
                .output_names
                .iter()
                .position(|n| n == h)
                .ok_or_else(|| CliError::Data(format!("{}: unknown output column {h:?}", y_path.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(FieldData::new(x, y_table.rows.transpose(), obs_index, bundle.output_names.len())?)
}

/// Numeric location encoded in an output name such as `d2.5`.
pub fn name_location(name: &str) -> Option<f64> {
    let start = name.find(|c: char| c.is_ascii_digit() || c == '-' || c == '.')?;
    name[start..].parse().ok()
}

/// Locations of the observed outputs: parsed from their names when every
/// name carries a number, otherwise their positions.
pub fn output_locations(bundle: &Bundle, obs_index: &[usize]) -> Vec<f64> {
    let parsed: Option<Vec<f64>> = obs_index.iter().map(|&i| name_location(&bundle.output_names[i])).collect();
    parsed.unwrap_or_else(|| obs_index.iter().map(|&i| i as f64).collect())
}

pub fn discrepancy_spec(
    choice: &DiscrepancyConfig,
    cal: &CalibrationSection,
    bundle: &Bundle,
    field: &FieldData,
) -> CliResult<Option<DiscrepancySpec>> {
    let mode = cal.discrepancy_nugget.map_or(NuggetMode::Estimate, NuggetMode::Fixed);
    Ok(match choice {
        DiscrepancyConfig::None => None,
        DiscrepancyConfig::Linear => Some(DiscrepancySpec::linear(&output_locations(bundle, &field.obs_index), mode)?),
        DiscrepancyConfig::BasisFile(path) => {
            let k = read_table(path)?.rows;
            if k.nrows() != field.obs_index.len() {
                return Err(CliError::Data(format!(
                    "{}: {} rows for {} observed outputs",
                    path.display(),
                    k.nrows(),
                    field.obs_index.len()
                )));
            }
            Some(DiscrepancySpec::new(k, mode)?)
        }
    })
}
