//! Dataset generation from direct-solution runs, and JSON Lines persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{direct_solve_trajectory, PipelineError, RunResult, Scenario};
use crate::learn::DatasetRecord;

/// Seeds are processed in fixed-size chunks so the accepted set never depends on the worker count.
pub const SEED_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    /// Maximum number of runs (initial states) attempted.
    pub attempts: usize,
    /// Stop once this many runs are accepted (checked after each chunk of seeds).
    pub target_accepted: Option<usize>,
    /// Run `i` uses seed `seed + i`.
    pub seed: u64,
    pub workers: usize,
}

impl DatasetOptions {
    pub fn attempts(attempts: usize, seed: u64) -> Self {
        Self {
            attempts,
            target_accepted: None,
            seed,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub scenario: String,
    pub scenario_hash: String,
    pub attempts: usize,
    pub accepted: usize,
    /// Runs stopped by CBF infeasibility, MPC infeasibility or a disturbance leaving the safe set.
    pub aborted: usize,
    pub mean_robustness: f64,
    pub first_seed: u64,
    /// Smallest barrier value over every emitted state of every run.
    pub min_barrier: Option<f64>,
    /// Emitted states with a negative barrier value over all runs.
    pub violations: usize,
    pub seconds: f64,
}

/// Runs the direct solution from `opts.attempts` seeds and keeps the runs with positive
/// robustness, in seed order.
pub fn generate_dataset(
    sc: &Scenario,
    opts: &DatasetOptions,
) -> Result<(Vec<DatasetRecord<f64>>, DatasetSummary), PipelineError> {
    if opts.attempts == 0 {
        return Err(PipelineError::Config("attempts must be at least 1".into()));
    }
    let start = std::time::Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let seeds: Vec<u64> = (0..opts.attempts as u64).map(|i| opts.seed + i).collect();
    let mut records = Vec::new();
    let mut attempts = 0;
    let mut aborted = 0;
    let mut violations = 0;
    let mut min_barrier: Option<f64> = None;
    for chunk in seeds.chunks(SEED_CHUNK) {
        let runs: Vec<RunResult> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&s| direct_solve_trajectory(sc, s))
                .collect::<Result<_, _>>()
        })?;
        for r in runs {
            attempts += 1;
            aborted += usize::from(r.aborted.is_some());
            violations += r.violations();
            if let Some(m) = r.min_barrier {
                min_barrier = Some(min_barrier.map_or(m, |x| x.min(m)));
            }
            if r.success() {
                records.push(r.to_record(sc.hash()));
            }
        }
        if opts.target_accepted.is_some_and(|t| records.len() >= t) {
            break;
        }
    }
    if let Some(t) = opts.target_accepted {
        records.truncate(t);
    }
    if records.is_empty() {
        return Err(PipelineError::NoAcceptedRuns { attempts });
    }
    let mean_robustness = records.iter().map(|r| r.robustness).sum::<f64>() / records.len() as f64;
    let summary = DatasetSummary {
        scenario: sc.name().to_string(),
        scenario_hash: sc.hash().to_string(),
        attempts,
        accepted: records.len(),
        aborted,
        mean_robustness,
        first_seed: opts.seed,
        min_barrier,
        violations,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((records, summary))
}

/// One JSON object per line.
pub fn write_dataset(path: &Path, records: &[DatasetRecord<f64>]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord<f64>>, PipelineError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
