//! Wall-clock comparison of the two nearest-neighbour prediction paths.

use std::path::Path;
use std::time::Instant;

use flagp_core::gp::{estimate_lengthscales, SubsampleMethod, SubsampleSpec, DEFAULT_NUGGET};
use flagp_core::rng::{rng_for, stream};
use flagp_core::scaling::{synthetic_problem, PrescaledPredictor, ReestimatingPredictor};
use rand::Rng;
use serde::Serialize;

use crate::error::CliResult;
use crate::io::write_records;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub batch: usize,
    pub neighbours: usize,
    pub fixed_secs: f64,
    pub reestimate_secs: f64,
    /// `reestimate_secs / fixed_secs`.
    pub ratio: f64,
}

/// Times `batch` sequential predictions along each path for every
/// `(M, d, seed)`. Global lengthscales for the fixed path come from a small
/// stratified fit outside the timed region.
pub fn bench_scaling(m_grid: &[usize], d_grid: &[usize], seeds: &[u64], batch: usize, neighbours: usize) -> CliResult<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &m in m_grid {
        for &d in d_grid {
            for &seed in seeds {
                let mut rng = rng_for(seed, &[stream::SIMULATE, m as u64, d as u64]);
                let (x, w) = synthetic_problem(m, d, &mut rng);
                let spec = SubsampleSpec { method: SubsampleMethod::Stratified { size: m.min(200.max(d + 2)) }, replicates: 3 };
                let l = estimate_lengthscales(&x, &w, &spec, DEFAULT_NUGGET, &mut rng)?;
                let queries: Vec<Vec<f64>> = (0..batch).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();

                let fixed = PrescaledPredictor::new(&x, w.clone(), l, DEFAULT_NUGGET)?;
                let start = Instant::now();
                for q in &queries {
                    std::hint::black_box(fixed.predict(q, neighbours)?);
                }
                let fixed_secs = start.elapsed().as_secs_f64();

                let local = ReestimatingPredictor::new(x, w, DEFAULT_NUGGET);
                let mut fit_rng = rng_for(seed, &[stream::FIT]);
                let start = Instant::now();
                for q in &queries {
                    std::hint::black_box(local.predict(q, neighbours, &mut fit_rng)?);
                }
                let reestimate_secs = start.elapsed().as_secs_f64();
                log::info!("bench M={m} d={d} seed={seed}: fixed {fixed_secs:.3}s, re-estimate {reestimate_secs:.3}s");
                rows.push(BenchRow {
                    m,
                    d,
                    seed,
                    batch,
                    neighbours,
                    fixed_secs,
                    reestimate_secs,
                    ratio: reestimate_secs / fixed_secs,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> CliResult<()> {
    let headers = ["m", "d", "seed", "batch", "neighbours", "fixed_secs", "reestimate_secs", "ratio"];
    write_records(
        path,
        &headers,
        rows.iter().map(|r| {
            vec![
                r.m.to_string(),
                r.d.to_string(),
                r.seed.to_string(),
                r.batch.to_string(),
                r.neighbours.to_string(),
                r.fixed_secs.to_string(),
                r.reestimate_secs.to_string(),
                r.ratio.to_string(),
            ]
        }),
    )
}
