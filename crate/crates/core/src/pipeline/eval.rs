//! Closed-loop evaluation of a trained controller against the direct solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{direct_solve_with, run_rnn_controller, LoopOptions, PipelineError, RunResult, Scenario};
use crate::learn::LstmParams;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub n_runs: usize,
    /// Run `i` uses seed `seed + i`.
    pub seed: u64,
    /// Number of runs (the first seeds) re-solved with the direct solution for timing.
    pub direct_runs: usize,
    pub workers: usize,
}

impl EvalOptions {
    pub fn new(n_runs: usize, seed: u64) -> Self {
        Self {
            n_runs,
            seed,
            direct_runs: 2,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub n_success: usize,
    pub n_satisfied: usize,
    pub n_safe: usize,
    pub n_aborted: usize,
    /// Fraction of runs that are safe and satisfying; aborted runs count as failures.
    pub success_rate: f64,
    /// Mean AGM robustness over satisfying runs (`None` when there are none).
    pub mean_robustness_satisfying: Option<f64>,
    pub min_barrier: Option<f64>,
    pub violations: usize,
    /// Seconds per reference-control computation, first step of every run excluded.
    pub mean_step_time_rnn: f64,
    pub median_step_time_rnn: f64,
    pub direct_seeds: Vec<u64>,
    pub mean_step_time_direct: f64,
    pub median_step_time_direct: f64,
    /// `mean_step_time_direct / mean_step_time_rnn`.
    pub speedup: f64,
    /// Seconds per CBF filter call in the controller runs, first step excluded.
    pub mean_filter_time: f64,
    /// Per-run robustness in seed order.
    pub robustness: Vec<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, PipelineError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// JSON with every wall-clock field zeroed; identical seeds give identical text.
    pub fn deterministic_json(&self) -> Result<String, PipelineError> {
        let mut r = self.clone();
        r.mean_step_time_rnn = 0.0;
        r.median_step_time_rnn = 0.0;
        r.mean_step_time_direct = 0.0;
        r.median_step_time_direct = 0.0;
        r.speedup = 0.0;
        r.mean_filter_time = 0.0;
        r.to_json()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn warm_times(runs: &[RunResult], pick: fn(&RunResult) -> &[f64]) -> Vec<f64> {
    runs.iter().flat_map(|r| pick(r).iter().skip(1).copied()).collect()
}

/// Runs the controller from `n_runs` seeds and times a subsample of direct solves.
pub fn evaluate(
    params: &LstmParams<f64>,
    sc: &Scenario,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<RunResult>), PipelineError> {
    if opts.n_runs == 0 {
        return Err(PipelineError::Config("n_runs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let seeds: Vec<u64> = (0..opts.n_runs as u64).map(|i| opts.seed + i).collect();
    let runs: Vec<RunResult> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_rnn_controller(params, sc, s))
            .collect::<Result<_, _>>()
    })?;
    let direct_seeds: Vec<u64> = seeds.iter().take(opts.direct_runs).copied().collect();
    let direct_opts = LoopOptions {
        filter: true,
        disturbance: sc.config.evaluation.disturbance,
    };
    let direct: Vec<RunResult> = direct_seeds
        .iter()
        .map(|&s| direct_solve_with(sc, s, direct_opts))
        .collect::<Result<_, _>>()?;

    let satisfying: Vec<f64> = runs.iter().filter(|r| r.satisfied).map(|r| r.robustness).collect();
    let n_success = runs.iter().filter(|r| r.success()).count();
    let rnn_times = warm_times(&runs, |r| &r.step_times);
    let direct_times = warm_times(&direct, |r| &r.step_times);
    let mean_rnn = mean(&rnn_times);
    let mean_direct = mean(&direct_times);
    let report = EvalReport {
        scenario: sc.name().to_string(),
        scenario_hash: sc.hash().to_string(),
        n_runs: runs.len(),
        seeds: seeds.clone(),
        n_success,
        n_satisfied: satisfying.len(),
        n_safe: runs.iter().filter(|r| r.safe).count(),
        n_aborted: runs.iter().filter(|r| r.aborted.is_some()).count(),
        success_rate: n_success as f64 / runs.len() as f64,
        mean_robustness_satisfying: (!satisfying.is_empty()).then(|| mean(&satisfying)),
        min_barrier: runs.iter().filter_map(|r| r.min_barrier).reduce(f64::min),
        violations: runs.iter().map(RunResult::violations).sum(),
        mean_step_time_rnn: mean_rnn,
        median_step_time_rnn: median(&rnn_times),
        direct_seeds,
        mean_step_time_direct: mean_direct,
        median_step_time_direct: median(&direct_times),
        speedup: if mean_rnn > 0.0 { mean_direct / mean_rnn } else { 0.0 },
        mean_filter_time: mean(&warm_times(&runs, |r| &r.filter_times)),
        robustness: runs.iter().map(|r| r.robustness).collect(),
    };
    Ok((report, runs))
}
