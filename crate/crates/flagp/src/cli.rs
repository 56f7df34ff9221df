//! Subcommands of the `flagp` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flagp_core::calibration::{calibrated_predict, mcmc_calibrate, CalibratedPrediction, CalibrationProblem, PosteriorSamples};
use flagp_core::dataset::{
    biased_calibration_study, distance_names, emulation_study, from_unit_hypercube, unbiased_calibration_study, BallDropStudy,
    InputRange,
};
use flagp_core::linalg::quantile;
use flagp_core::map::map_optimize;
use flagp_core::metrics::score_report;
use flagp_core::rng::{rng_for, stream};
use flagp_core::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::bench::{bench_scaling, write_bench_csv};
use crate::bundle::Bundle;
use crate::config::{DiscrepancyConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_ranges, read_table, write_json, write_records, write_table};
use crate::manifest::{beside, RunManifest};
use crate::pipeline::{discrepancy_spec, fit_parallel, load_ensemble, load_field, unit_inputs};

#[derive(Debug, Parser)]
#[command(name = "flagp", version, about = "Local-GP emulation and calibration for simulators with functional output")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a ball-drop ensemble, field data and a hold-out set.
    Simulate(SimulateArgs),
    /// Fit an emulator and write a model bundle.
    Fit(FitArgs),
    /// Emulator predictions with sample quantiles.
    Predict(PredictArgs),
    /// MCMC calibration against field data.
    Calibrate(CalibrateArgs),
    /// MAP calibration against field data.
    Map(MapArgs),
    /// Score predictions against the truth.
    Score(ScoreArgs),
    /// Time prescaled against re-estimating nearest-neighbour prediction.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn files(&self) -> Vec<&Path> {
        self.config.as_deref().into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Emulation,
    Unbiased,
    Biased,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Ensemble size (242 for emulation and unbiased, 1058 for biased).
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    #[arg(long)]
    pub ranges: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Inputs in natural units, one row per prediction.
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub field_inputs: PathBuf,
    #[arg(long)]
    pub field_outputs: PathBuf,
    /// `none`, `linear`, or a basis CSV; overrides the config.
    #[arg(long)]
    pub discrepancy: Option<String>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    /// Controllable inputs at which to make calibrated predictions.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Prediction CSV written by `predict` or `calibrate`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Truth CSV with one row per input and one column per output.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "2000,20000")]
    pub m_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,10")]
    pub d_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub neighbours: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // a pool already set up in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Map(a) => map(a),
        Command::Score(a) => score(a),
        Command::Bench(a) => bench(a),
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn names(ranges: &[InputRange]) -> Vec<String> {
    ranges.iter().map(|r| r.name.clone()).collect()
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = a.cfg.load()?;
    let mut rng = rng_for(cfg.seed, &[stream::SIMULATE]);
    let study: BallDropStudy = match a.preset {
        Preset::Emulation => emulation_study(a.runs.unwrap_or(242), &mut rng)?,
        Preset::Unbiased => unbiased_calibration_study(a.runs.unwrap_or(242), &mut rng)?,
        Preset::Biased => biased_calibration_study(a.runs.unwrap_or(1058), &mut rng)?,
    };
    create_dir(&a.out)?;
    let ens = &study.ensemble;
    let ranges = &ens.input_ranges;
    let out_names = distance_names(&study.distances);
    write_table(&a.out.join("inputs.csv"), &names(ranges), &from_unit_hypercube(&ens.x, ranges)?)?;
    write_table(&a.out.join("outputs.csv"), &out_names, &ens.z_raw.transpose())?;
    write_json(&a.out.join("ranges.json"), ranges)?;
    let d_x = ranges.len() - study.t_dim;
    let observed: Vec<String> = match &study.field {
        Some(f) => f.obs_index.iter().map(|&i| out_names[i].clone()).collect(),
        None => out_names.clone(),
    };
    write_table(&a.out.join("test_inputs.csv"), &names(&ranges[..d_x]), &from_unit_hypercube(&study.test_x, &ranges[..d_x])?)?;
    write_table(&a.out.join("test_truth.csv"), &observed, &study.test_truth.transpose())?;
    if let Some(f) = &study.field {
        write_table(&a.out.join("field_inputs.csv"), &names(&ranges[..d_x]), &from_unit_hypercube(&f.x, &ranges[..d_x])?)?;
        write_table(&a.out.join("field_outputs.csv"), &observed, &f.y.transpose())?;
    }
    RunManifest::new("simulate", &cfg, &a.cfg.files())?.write(&a.out.join("manifest.json"))
}

fn fit(a: FitArgs) -> CliResult<()> {
    let cfg = a.cfg.load()?;
    let inputs = read_table(&a.inputs)?;
    let outputs = read_table(&a.outputs)?;
    let ensemble = load_ensemble(&inputs, &outputs, read_ranges(&a.ranges)?)?;
    let start = Instant::now();
    let model = fit_parallel(&ensemble, &cfg.emulator_config(), cfg.seed)?;
    log::info!("fit {} runs in {:.2}s", ensemble.n_runs(), start.elapsed().as_secs_f64());
    Bundle { model, output_names: outputs.headers }.save(&a.out)?;
    let mut files = a.cfg.files();
    files.extend([a.inputs.as_path(), a.outputs.as_path(), a.ranges.as_path()]);
    RunManifest::new("fit", &cfg, &files)?.write(&beside(&a.out))
}

const PRED_HEADERS: [&str; 5] = ["input", "output", "mean", "lower", "upper"];

fn prediction_records(names: &[String], mean: &DMatrix<f64>, lower: &DMatrix<f64>, upper: &DMatrix<f64>) -> Vec<Vec<String>> {
    let mut records = Vec::new();
    for j in 0..mean.ncols() {
        for (i, name) in names.iter().enumerate() {
            records.push(vec![
                j.to_string(),
                name.clone(),
                mean[(i, j)].to_string(),
                lower[(i, j)].to_string(),
                upper[(i, j)].to_string(),
            ]);
        }
    }
    records
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let cfg = a.cfg.load()?;
    if cfg.emulator.samples < 2 {
        return Err(CliError::Config("emulator.samples must be at least 2 for quantiles".into()));
    }
    let bundle = Bundle::load(&a.model)?;
    let model = &bundle.model;
    let table = read_table(&a.inputs)?;
    if table.headers.len() != model.input_ranges.len() {
        return Err(CliError::Data(format!("{} input columns for a {}-input model", table.headers.len(), model.input_ranges.len())));
    }
    let x = unit_inputs(&table, &model.input_ranges)?;
    let m = cfg.emulator.m.min(model.n_runs());
    let per_row = (0..x.nrows())
        .into_par_iter()
        .map(|j| {
            let q: Vec<f64> = x.row(j).iter().copied().collect();
            let mut rng = rng_for(cfg.seed, &[stream::PREDICT, j as u64]);
            let p = model.predict(&q, m, cfg.emulator.samples, &mut rng)?;
            let s = p.samples.expect("samples requested");
            let bounds: Vec<(f64, f64)> = (0..s.nrows())
                .map(|i| {
                    let row: Vec<f64> = s.row(i).iter().copied().collect();
                    (quantile(&row, 0.025), quantile(&row, 0.975))
                })
                .collect();
            Ok((p.mean, bounds))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let d = bundle.output_names.len();
    let mean = DMatrix::from_fn(d, x.nrows(), |i, j| per_row[j].0[i]);
    let lower = DMatrix::from_fn(d, x.nrows(), |i, j| per_row[j].1[i].0);
    let upper = DMatrix::from_fn(d, x.nrows(), |i, j| per_row[j].1[i].1);
    write_records(&a.out, &PRED_HEADERS, prediction_records(&bundle.output_names, &mean, &lower, &upper))?;
    let mut files = a.cfg.files();
    files.extend([a.model.as_path(), a.inputs.as_path()]);
    RunManifest::new("predict", &cfg, &files)?.write(&beside(&a.out))
}

fn discrepancy_choice(flag: &Option<String>, cfg: &RunConfig) -> DiscrepancyConfig {
    match flag.as_deref() {
        None => cfg.calibration.discrepancy.clone(),
        Some("none") => DiscrepancyConfig::None,
        Some("linear") => DiscrepancyConfig::Linear,
        Some(path) => DiscrepancyConfig::BasisFile(PathBuf::from(path)),
    }
}

struct Loaded {
    bundle: Bundle,
    field: flagp_core::dataset::FieldData,
    choice: DiscrepancyConfig,
}

fn load_problem_inputs(f: &FieldArgs, cfg: &RunConfig) -> CliResult<Loaded> {
    let bundle = Bundle::load(&f.model)?;
    let field = load_field(&bundle, &f.field_inputs, &f.field_outputs)?;
    Ok(Loaded { bundle, field, choice: discrepancy_choice(&f.discrepancy, cfg) })
}

fn build_problem<'a>(l: &'a Loaded, cfg: &RunConfig) -> CliResult<CalibrationProblem<'a>> {
    let cal = &cfg.calibration;
    let spec = discrepancy_spec(&l.choice, cal, &l.bundle, &l.field)?;
    let m_c = cal.m_c.min(l.bundle.model.n_runs());
    let mut p = CalibrationProblem::new(&l.bundle.model, &l.field, cal.t_dim, cal.prior_sigma2.to_prior(), spec, m_c)?;
    p.refit_every = cal.refit_every;
    Ok(p)
}

fn field_files<'a>(f: &'a FieldArgs, choice: &'a DiscrepancyConfig) -> Vec<&'a Path> {
    let mut v = vec![f.model.as_path(), f.field_inputs.as_path(), f.field_outputs.as_path()];
    if let DiscrepancyConfig::BasisFile(p) = choice {
        v.push(p.as_path());
    }
    v
}

#[derive(Serialize)]
struct ParameterSummary {
    name: String,
    mean_unit: f64,
    mean: f64,
    lower_95: f64,
    upper_95: f64,
}

#[derive(Serialize)]
struct Diagnostics {
    n_samples: usize,
    n_burn: usize,
    acceptance_rate: f64,
    failed_evaluations: usize,
    proposal_cov: Vec<Vec<f64>>,
    discrepancy: DiscrepancyConfig,
    parameters: Vec<ParameterSummary>,
    sigma2_mean: f64,
}

fn diagnostics(post: &PosteriorSamples, t_ranges: &[InputRange], choice: &DiscrepancyConfig) -> Diagnostics {
    let mean = post.posterior_mean();
    let parameters = t_ranges
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let (lo, hi) = post.credible_interval(k, 0.05);
            ParameterSummary {
                name: r.name.clone(),
                mean_unit: mean[k],
                mean: r.from_unit(mean[k]),
                lower_95: r.from_unit(lo),
                upper_95: r.from_unit(hi),
            }
        })
        .collect();
    let kept = &post.sigma2[post.post_burn()];
    Diagnostics {
        n_samples: post.len(),
        n_burn: post.n_burn,
        acceptance_rate: post.acceptance_rate,
        failed_evaluations: post.failed_evaluations,
        proposal_cov: post.proposal_cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        discrepancy: choice.clone(),
        parameters,
        sigma2_mean: kept.iter().sum::<f64>() / kept.len() as f64,
    }
}

fn write_posterior(path: &Path, post: &PosteriorSamples, t_ranges: &[InputRange]) -> CliResult<()> {
    let mut headers = vec!["iteration"];
    headers.extend(t_ranges.iter().map(|r| r.name.as_str()));
    headers.extend(["sigma2", "log_post", "accepted", "burn_in"]);
    let records = (0..post.len()).map(|it| {
        let mut r = vec![it.to_string()];
        r.extend(t_ranges.iter().enumerate().map(|(k, range)| range.from_unit(post.theta[(it, k)]).to_string()));
        r.push(post.sigma2[it].to_string());
        r.push(post.log_post[it].to_string());
        r.push(u8::from(post.accepted[it]).to_string());
        r.push(u8::from(it < post.n_burn).to_string());
        r
    });
    write_records(path, &headers, records)
}

fn calibrate(a: CalibrateArgs) -> CliResult<()> {
    let cfg = a.cfg.load()?;
    let loaded = load_problem_inputs(&a.field, &cfg)?;
    let problem = build_problem(&loaded, &cfg)?;
    let ranges = &loaded.bundle.model.input_ranges;
    let d_x = ranges.len() - cfg.calibration.t_dim;
    let test = a.test.as_deref().map(read_table).transpose()?;
    let x_test = test.as_ref().map(|t| unit_inputs(t, &ranges[..d_x])).transpose()?;
    create_dir(&a.out_dir)?;

    let cal = &cfg.calibration;
    let start = Instant::now();
    let post = mcmc_calibrate(&problem, cal.n_samples, cal.n_burn, cfg.seed)?;
    log::info!("mcmc: {:.2}s, acceptance {:.3}", start.elapsed().as_secs_f64(), post.acceptance_rate);
    write_posterior(&a.out_dir.join("posterior.csv"), &post, &ranges[d_x..])?;
    write_json(&a.out_dir.join("diagnostics.json"), &diagnostics(&post, &ranges[d_x..], &loaded.choice))?;

    if let Some(x) = &x_test {
        let m = cfg.emulator.m.min(loaded.bundle.model.n_runs());
        let start = Instant::now();
        let pred: CalibratedPrediction = calibrated_predict(&problem, &post, x, m, cal.prediction_draws, cfg.seed)?;
        log::info!("calibrated prediction: {:.2}s", start.elapsed().as_secs_f64());
        let names: Vec<String> = loaded.field.obs_index.iter().map(|&i| loaded.bundle.output_names[i].clone()).collect();
        write_records(
            &a.out_dir.join("predictions.csv"),
            &PRED_HEADERS,
            prediction_records(&names, &pred.mean, &pred.lower, &pred.upper),
        )?;
    }
    let mut files = a.cfg.files();
    files.extend(field_files(&a.field, &loaded.choice));
    if let Some(t) = &a.test {
        files.push(t.as_path());
    }
    RunManifest::new("calibrate", &cfg, &files)?.write(&a.out_dir.join("manifest.json"))
}

#[derive(Serialize)]
struct RestartJson {
    start_theta: Vec<f64>,
    start_sigma2: f64,
    start_objective: f64,
    theta: Vec<f64>,
    sigma2: f64,
    objective: f64,
    evaluations: usize,
}

#[derive(Serialize)]
struct MapJson {
    parameters: Vec<String>,
    theta_unit: Vec<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    objective: f64,
    restarts: Vec<RestartJson>,
}

fn map(a: MapArgs) -> CliResult<()> {
    let cfg = a.cfg.load()?;
    let loaded = load_problem_inputs(&a.field, &cfg)?;
    let problem = build_problem(&loaded, &cfg)?;
    let start = Instant::now();
    let res = map_optimize(&problem, cfg.map.restarts, cfg.seed)?;
    log::info!("map: {:.2}s", start.elapsed().as_secs_f64());
    let ranges = &loaded.bundle.model.input_ranges;
    let t_ranges = &ranges[ranges.len() - cfg.calibration.t_dim..];
    let out = MapJson {
        parameters: names(t_ranges),
        theta: res.theta.iter().zip(t_ranges).map(|(v, r)| r.from_unit(*v)).collect(),
        theta_unit: res.theta.clone(),
        sigma2: res.sigma2,
        objective: res.value,
        restarts: res
            .restarts
            .into_iter()
            .map(|r| RestartJson {
                start_theta: r.start_theta,
                start_sigma2: r.start_sigma2,
                start_objective: r.start_value,
                theta: r.theta,
                sigma2: r.sigma2,
                objective: r.value,
                evaluations: r.evals,
            })
            .collect(),
    };
    write_json(&a.out, &out)?;
    let mut files = a.cfg.files();
    files.extend(field_files(&a.field, &loaded.choice));
    RunManifest::new("map", &cfg, &files)?.write(&beside(&a.out))
}

#[derive(serde::Deserialize)]
struct PredRow {
    input: usize,
    output: String,
    mean: f64,
    lower: f64,
    upper: f64,
}

fn score(a: ScoreArgs) -> CliResult<()> {
    let truth = read_table(&a.truth)?;
    let mut rdr = csv::Reader::from_path(&a.pred).map_err(|e| CliError::io(&a.pred, e))?;
    let (mut mean, mut lows, mut highs, mut ys) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.deserialize::<PredRow>() {
        let r = rec.map_err(|e| CliError::io(&a.pred, e))?;
        let col = truth
            .column_index(&r.output)
            .ok_or_else(|| CliError::Data(format!("{}: output {:?} not in the truth file", a.pred.display(), r.output)))?;
        if r.input >= truth.rows.nrows() {
            return Err(CliError::Data(format!("{}: input {} beyond the truth rows", a.pred.display(), r.input)));
        }
        mean.push(r.mean);
        lows.push(r.lower);
        highs.push(r.upper);
        ys.push(truth.rows[(r.input, col)]);
    }
    let report = score_report(&mean, &lows, &highs, &ys)?;
    write_json(&a.out, &report)
}

fn bench(a: BenchArgs) -> CliResult<()> {
    if a.batch == 0 || a.neighbours < 2 {
        return Err(CliError::Config("bench needs a positive batch and at least 2 neighbours".into()));
    }
    let rows = bench_scaling(&a.m_grid, &a.d_grid, &a.seeds, a.batch, a.neighbours)?;
    write_bench_csv(&a.out, &rows)
}

