//! Scenario orchestration: the direct-solution loop, dataset generation, RNN closed-loop runs,
//! evaluation metrics and plot data.

mod config;
mod dataset;
mod eval;
mod plot;

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::{DatasetRecord, LearnError, LstmParams, RnnController};
use crate::optim::{
    seeded_rng, solve_reference_control, solve_reference_control_mpc, MpcProblem, OptimError,
    ReferenceProblem,
};
use crate::safety::{solve_safe_control, Barrier, SafetyError};
use crate::stl::{eval_robustness_agm, ParseError, StlError, Trace};
use crate::systems::{DisturbanceSpec, SystemError};

pub use config::{
    BoxConfig, DisturbanceConfig, EvaluationConfig, InitConfig, Mode, ModelConfig, MpcConfig,
    MpcSpec, RandomDisksConfig, RegionConfig, SafetyConfig, Scenario, ScenarioConfig, CASE1_TOML,
    CASE2_TOML,
};
pub use dataset::{
    generate_dataset, read_dataset, write_dataset, DatasetOptions, DatasetSummary, SEED_CHUNK,
};
pub use eval::{evaluate, EvalOptions, EvalReport};
pub use plot::{emit_plot_data, render_svg, PlotData};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("no satisfying trajectory in {attempts} attempts")]
    NoAcceptedRuns { attempts: usize },
    #[error("controller does not match the scenario: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const STREAM_INIT: u64 = 1;
const STREAM_BARRIERS: u64 = 2;
const STREAM_DISTURBANCE: u64 = 3;
const STREAM_OPTIMIZER: u64 = 4;

/// Independent random stream `stream` of run `seed`.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Direct,
    Rnn,
}

/// Outcome of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub controller: ControllerKind,
    /// Emitted states `q_0 …`; shorter than `K + 1` when the run aborted.
    pub trajectory: Vec<Vec<f64>>,
    pub applied_controls: Vec<Vec<f64>>,
    pub reference_controls: Vec<Vec<f64>>,
    pub barriers: Vec<Barrier<f64>>,
    /// AGM robustness of the full trajectory; `-1` for aborted runs.
    pub robustness: f64,
    pub satisfied: bool,
    /// Every emitted state has every barrier value `>= 0`.
    pub safe: bool,
    /// Smallest barrier value over the emitted states (`None` without barriers).
    pub min_barrier: Option<f64>,
    pub aborted: Option<String>,
    /// Wall-clock seconds per step spent computing the reference control.
    pub step_times: Vec<f64>,
    /// Wall-clock seconds per step spent in the CBF filter.
    pub filter_times: Vec<f64>,
}

impl RunResult {
    pub fn trace(&self) -> Trace<f64> {
        Trace::from_states(&self.trajectory, 0).expect("non-empty trajectory")
    }

    /// Safe and satisfying.
    pub fn success(&self) -> bool {
        self.safe && self.satisfied && self.aborted.is_none()
    }

    /// Number of emitted states with a negative barrier value.
    pub fn violations(&self) -> usize {
        self.trajectory
            .iter()
            .filter(|q| self.barriers.iter().any(|b| b.value_unchecked(q) < 0.0))
            .count()
    }

    pub fn to_record(&self, scenario_hash: &str) -> DatasetRecord<f64> {
        DatasetRecord {
            states: self.trajectory.clone(),
            ref_controls: self.reference_controls.clone(),
            robustness: self.robustness,
            barriers: self.barriers.clone(),
            seed: self.seed,
            scenario_hash: scenario_hash.to_string(),
        }
    }
}

/// Closed-loop knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopOptions {
    /// Pass controls through the CBF filter. Without it, unsafe states are emitted and flagged
    /// instead of aborting the run.
    pub filter: bool,
    /// Add the scenario disturbance after each step.
    pub disturbance: bool,
}

type Policy<'a> = dyn FnMut(usize, &Trace<f64>) -> Result<Vec<f64>, String> + 'a;

fn closed_loop(
    sc: &Scenario,
    seed: u64,
    controller: ControllerKind,
    opts: LoopOptions,
    policy: &mut Policy<'_>,
) -> Result<RunResult, PipelineError> {
    let model = &sc.model;
    let q0 = sc.sample_initial_state(&mut stream_rng(seed, STREAM_INIT));
    let barriers = sc.sample_barriers(&mut stream_rng(seed, STREAM_BARRIERS))?;
    let bs = sc.barrier_set(barriers);
    let dist = if opts.disturbance {
        sc.disturbance(stream_rng(seed, STREAM_DISTURBANCE).random())
    } else {
        DisturbanceSpec::none()
    };
    let mut noise = dist.stream();

    let mut trace = Trace::from_states(&[q0], 0).expect("one state");
    let mut applied = Vec::with_capacity(sc.final_time);
    let mut reference = Vec::with_capacity(sc.final_time);
    let mut step_times = Vec::with_capacity(sc.final_time);
    let mut filter_times = Vec::with_capacity(sc.final_time);
    let mut next = vec![0.0; model.state_dim()];
    let mut aborted = None;

    for k in 0..sc.final_time {
        let q = trace.last().expect("non-empty").to_vec();
        let t0 = Instant::now();
        let u_ref = match policy(k, &trace) {
            Ok(u) => u,
            Err(msg) => {
                aborted = Some(format!("step {k}: {msg}"));
                break;
            }
        };
        step_times.push(t0.elapsed().as_secs_f64());
        let t1 = Instant::now();
        let u = if opts.filter {
            match solve_safe_control(model, &q, &u_ref, &bs) {
                Ok(u) => u,
                Err(e) => {
                    aborted = Some(format!("step {k}: {e}"));
                    break;
                }
            }
        } else {
            u_ref.clone()
        };
        filter_times.push(t1.elapsed().as_secs_f64());
        model.step_into(&q, &u, &mut next);
        noise.apply(&mut next);
        if opts.filter && bs.min_value(&next) < 0.0 {
            aborted = Some(format!("step {k}: disturbance left the safe set"));
            break;
        }
        trace.push(&next);
        reference.push(u_ref);
        applied.push(u);
    }

    let (robustness, satisfied) = if aborted.is_none() {
        let r = eval_robustness_agm(&sc.formula, &trace, 0)?.value;
        (r, r > 0.0)
    } else {
        (-1.0, false)
    };
    let min_barrier = trace
        .states()
        .map(|q| bs.min_value(q))
        .reduce(f64::min)
        .filter(|v| v.is_finite());
    Ok(RunResult {
        seed,
        controller,
        trajectory: trace.to_rows(),
        applied_controls: applied,
        reference_controls: reference,
        robustness,
        satisfied,
        safe: min_barrier.is_none_or(|m| m >= 0.0),
        min_barrier,
        barriers: bs.barriers,
        aborted,
        step_times,
        filter_times,
    })
}

/// Direct solution: at each step solve the reference problem, filter its first control through
/// the CBFs and apply it with the scenario disturbance. Reference controls are recorded before
/// filtering.
pub fn direct_solve_trajectory(sc: &Scenario, seed: u64) -> Result<RunResult, PipelineError> {
    direct_solve_with(
        sc,
        seed,
        LoopOptions {
            filter: true,
            disturbance: true,
        },
    )
}

pub fn direct_solve_with(
    sc: &Scenario,
    seed: u64,
    opts: LoopOptions,
) -> Result<RunResult, PipelineError> {
    let model = &sc.model;
    let settings = sc.optimizer().clone();
    let mut seeds = stream_rng(seed, STREAM_OPTIMIZER);
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let n = model.state_dim();

    let mut policy = |k: usize, tr: &Trace<f64>| -> Result<Vec<f64>, String> {
        let s = settings.with_seed(seeds.random());
        let state = tr.last().expect("non-empty").to_vec();
        let plan = match &sc.mpc {
            None => {
                let history = if k == 0 { Trace::empty(n) } else { tr.window(0, k) };
                let rp = ReferenceProblem {
                    model,
                    formula: &sc.formula,
                    lambda: sc.lambda(),
                    history,
                    state,
                    horizon_end: sc.final_time,
                    warm_start: warm.take(),
                };
                solve_reference_control(&rp, &s).map_err(|e| e.to_string())?.controls
            }
            Some(m) => {
                let mut mp = MpcProblem {
                    model,
                    phi: &m.phi,
                    k1: m.k1,
                    h_p: m.h_p,
                    lambda: sc.lambda(),
                    history: Trace::empty(n),
                    state,
                    k,
                    warm_start: warm.take(),
                };
                let w = mp.history_len();
                if w > 0 {
                    mp.history = tr.window(k - w, k);
                }
                solve_reference_control_mpc(&mp, &s).map_err(|e| e.to_string())?.controls
            }
        };
        let u = plan[0].clone();
        if plan.len() > 1 {
            warm = Some(plan[1..].to_vec());
        }
        Ok(u)
    };
    closed_loop(sc, seed, ControllerKind::Direct, opts, &mut policy)
}

fn check_params(params: &LstmParams<f64>, sc: &Scenario) -> Result<(), PipelineError> {
    if params.input_dim() != sc.model.state_dim() || params.bounds() != sc.model.bounds() {
        return Err(PipelineError::Mismatch(format!(
            "network maps {} states into {:?}..{:?}, scenario {} has {} states and bounds {:?}..{:?}",
            params.input_dim(),
            params.bounds().lower(),
            params.bounds().upper(),
            sc.name(),
            sc.model.state_dim(),
            sc.model.bounds().lower(),
            sc.model.bounds().upper()
        )));
    }
    Ok(())
}

/// Closed-loop run of the recurrent controller followed by the CBF filter.
///
/// The scenario disturbance is applied only when the scenario's evaluation settings ask for it.
pub fn run_rnn_controller(
    params: &LstmParams<f64>,
    sc: &Scenario,
    seed: u64,
) -> Result<RunResult, PipelineError> {
    run_rnn_with(
        params,
        sc,
        seed,
        LoopOptions {
            filter: true,
            disturbance: sc.config.evaluation.disturbance,
        },
    )
}

pub fn run_rnn_with(
    params: &LstmParams<f64>,
    sc: &Scenario,
    seed: u64,
    opts: LoopOptions,
) -> Result<RunResult, PipelineError> {
    check_params(params, sc)?;
    let mut ctl = RnnController::new(params);
    let mut policy = |_k: usize, tr: &Trace<f64>| -> Result<Vec<f64>, String> {
        ctl.step(tr.last().expect("non-empty")).map_err(|e| e.to_string())
    };
    closed_loop(sc, seed, ControllerKind::Rnn, opts, &mut policy)
}
