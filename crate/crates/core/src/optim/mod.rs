//! Box-constrained nonlinear minimization with inequality constraints, and the reference-control
//! solvers built on it.
//!
//! The inner solver is a spectral projected gradient method (Barzilai-Borwein steps with a
//! non-monotone Armijo line search) driven by central finite-difference gradients. Inequality
//! constraints `c_i(x) > 0` are handled by an exterior quadratic penalty escalated over three
//! rounds, followed by a feasibility polish that minimizes the remaining violation alone.

mod reference;
mod small_qp;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::stl::StlError;

pub use small_qp::{diagonal_qp, Halfspace, MAX_QP_DIM};
pub use reference::{
    flatten_controls, solve_reference_control, solve_reference_control_mpc, unflatten_controls,
    MpcProblem, MpcSolution, ReferenceProblem, ReferenceSolution,
};

/// Penalty weights of the three escalation rounds.
const PENALTY_SCHEDULE: [f64; 3] = [1e2, 1e4, 1e6];
/// Number of past merit values the non-monotone line search compares against.
const NONMONOTONE_MEMORY: usize = 10;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("invalid optimizer settings: {0}")]
    Settings(String),
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("no start satisfied the recursive-feasibility constraints at time {time} (best violation {violation:e})")]
    MpcInfeasible { time: usize, violation: f64 },
}

/// Solver knobs shared by every optimization in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Central finite-difference step.
    pub grad_step: f64,
    pub tol: f64,
    /// Maximum number of starting points tried by the reference solvers.
    pub restarts: usize,
    pub seed: u64,
    /// Largest step per iteration as a fraction of each box width (`None`: unlimited). Keeps the
    /// iterates from jumping across thin infeasible regions.
    pub max_step: Option<f64>,
    /// Reference solvers stop drawing random restarts once a start is accepted. When `false`,
    /// every restart runs and the best solution is kept.
    pub early_stop: bool,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_step: 1e-5,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
            max_step: None,
            early_stop: true,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(OptimError::Settings(
                "max_iters and restarts must be at least 1".into(),
            ));
        }
        if !(self.grad_step > 0.0 && self.tol > 0.0) {
            return Err(OptimError::Settings(
                "grad_step and tol must be positive".into(),
            ));
        }
        if self.max_step.is_some_and(|m| !(m > 0.0)) {
            return Err(OptimError::Settings("max_step must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Minimization problem over a box with constraints `c_i(x) > 0`.
///
/// Objective and constraints take `&mut self` so implementations can reuse scratch buffers. They
/// may be evaluated slightly outside the box (finite differences at the boundary).
pub trait Problem<T: Scalar> {
    fn dim(&self) -> usize;
    fn lower(&self) -> &[T];
    fn upper(&self) -> &[T];
    fn objective(&mut self, x: &[T]) -> T;

    fn num_constraints(&self) -> usize {
        0
    }

    fn constraints(&mut self, _x: &[T], _out: &mut [T]) {}
}

type BoxedFn<'a, T> = Box<dyn FnMut(&[T]) -> T + 'a>;

/// Closure-backed [`Problem`].
pub struct NlpProblem<'a, T> {
    lower: Vec<T>,
    upper: Vec<T>,
    objective: BoxedFn<'a, T>,
    constraints: Vec<BoxedFn<'a, T>>,
}

impl<'a, T: Scalar> NlpProblem<'a, T> {
    pub fn new(
        lower: Vec<T>,
        upper: Vec<T>,
        objective: impl FnMut(&[T]) -> T + 'a,
    ) -> Result<Self, OptimError> {
        if lower.is_empty() || lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(OptimError::Problem(
                "box must be non-empty with lower <= upper".into(),
            ));
        }
        Ok(Self {
            lower,
            upper,
            objective: Box::new(objective),
            constraints: Vec::new(),
        })
    }

    /// Adds a constraint required to be strictly positive.
    pub fn constraint(mut self, c: impl FnMut(&[T]) -> T + 'a) -> Self {
        self.constraints.push(Box::new(c));
        self
    }
}

impl<T: Scalar> Problem<T> for NlpProblem<'_, T> {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn lower(&self) -> &[T] {
        &self.lower
    }

    fn upper(&self) -> &[T] {
        &self.upper
    }

    fn objective(&mut self, x: &[T]) -> T {
        (self.objective)(x)
    }

    fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn constraints(&mut self, x: &[T], out: &mut [T]) {
        for (c, o) in self.constraints.iter_mut().zip(out) {
            *o = c(x);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub x: Vec<T>,
    pub value: T,
    /// All constraints strictly positive at `x`.
    pub feasible: bool,
    /// Smallest constraint value (`+inf` without constraints).
    pub min_constraint: T,
    pub evaluations: usize,
}

impl<T: Scalar> Solution<T> {
    /// Feasible beats infeasible; then lower objective, or smaller violation.
    pub fn better_than(&self, other: &Solution<T>) -> bool {
        match (self.feasible, other.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.value < other.value,
            (false, false) => self.min_constraint > other.min_constraint,
        }
    }
}

fn project<T: Scalar>(x: &mut [T], lo: &[T], hi: &[T]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.max(*l).min(*h);
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference_gradient<T: Scalar>(
    f: &mut dyn FnMut(&[T]) -> T,
    x: &[T],
    step: T,
    out: &mut [T],
) {
    let mut probe = x.to_vec();
    let two_h = step + step;
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + step;
        let fp = f(&probe);
        probe[i] = xi - step;
        let fm = f(&probe);
        probe[i] = xi;
        out[i] = (fp - fm) / two_h;
    }
}

fn inf_norm<T: Scalar>(v: impl Iterator<Item = T>) -> T {
    v.fold(T::zero(), |m, x| m.max(x.abs()))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// Spectral projected gradient on `f` over `[lo, hi]`; returns the best point visited.
fn spg<T: Scalar>(
    f: &mut dyn FnMut(&[T]) -> T,
    x0: Vec<T>,
    lo: &[T],
    hi: &[T],
    s: &OptimizerSettings,
) -> (Vec<T>, T) {
    let n = x0.len();
    let h = T::of(s.grad_step);
    let tol = T::of(s.tol);
    let (lam_min, lam_max) = (T::of(STEP_MIN), T::of(STEP_MAX));
    let armijo = T::of(1e-4);

    let mut x = x0;
    let mut fx = f(&x);
    let mut g = vec![T::zero(); n];
    finite_difference_gradient(f, &x, h, &mut g);
    let mut best = (x.clone(), fx);

    let mut trial = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    let mut history: VecDeque<T> = VecDeque::with_capacity(NONMONOTONE_MEMORY);
    history.push_back(fx);

    let pg_norm = |x: &[T], g: &[T], buf: &mut [T]| {
        for i in 0..n {
            buf[i] = x[i] - g[i];
        }
        project(buf, lo, hi);
        inf_norm(buf.iter().zip(x).map(|(p, x)| *p - *x))
    };
    let pg0 = pg_norm(&x, &g, &mut trial);
    if pg0 <= tol {
        return best;
    }
    let mut lam = (T::one() / pg0).max(lam_min).min(lam_max);
    let mut stall = 0usize;

    for _ in 0..s.max_iters {
        if pg_norm(&x, &g, &mut trial) <= tol {
            break;
        }
        for i in 0..n {
            d[i] = x[i] - lam * g[i];
        }
        project(&mut d, lo, hi);
        for i in 0..n {
            d[i] -= x[i];
        }
        if let Some(m) = s.max_step {
            let ratio = (0..n)
                .filter(|&i| hi[i] > lo[i])
                .map(|i| d[i].abs() / (T::of(m) * (hi[i] - lo[i])))
                .fold(T::zero(), T::max);
            if ratio > T::one() {
                d.iter_mut().for_each(|v| *v /= ratio);
            }
        }
        let gtd = dot(&g, &d);
        if gtd >= T::zero() {
            break;
        }
        let f_ref = history.iter().copied().fold(T::neg_infinity(), T::max);
        let mut t = T::one();
        let f_trial = loop {
            for i in 0..n {
                trial[i] = x[i] + t * d[i];
            }
            let ft = f(&trial);
            if ft <= f_ref + armijo * t * gtd {
                break Some(ft);
            }
            if t < lam_min {
                break None;
            }
            let denom = ft - fx - t * gtd;
            let tq = if denom > T::zero() {
                -T::of(0.5) * t * t * gtd / denom
            } else {
                t / T::of(2.0)
            };
            t = if tq >= T::of(0.1) * t && tq <= T::of(0.9) * t {
                tq
            } else {
                t / T::of(2.0)
            };
        };
        let Some(f_trial) = f_trial else { break };

        finite_difference_gradient(f, &trial, h, &mut g_new);
        let mut ss = T::zero();
        let mut sy = T::zero();
        for i in 0..n {
            let si = trial[i] - x[i];
            let yi = g_new[i] - g[i];
            ss += si * si;
            sy += si * yi;
        }
        lam = if sy <= T::zero() {
            lam_max
        } else {
            (ss / sy).max(lam_min).min(lam_max)
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_trial;
        if history.len() == NONMONOTONE_MEMORY {
            history.pop_front();
        }
        history.push_back(fx);

        if fx < best.1 - T::of(1e-12) * (T::one() + best.1.abs()) {
            stall = 0;
        } else {
            stall += 1;
            if stall >= 2 * NONMONOTONE_MEMORY {
                if fx < best.1 {
                    best = (x.clone(), fx);
                }
                break;
            }
        }
        if fx < best.1 {
            best = (x.clone(), fx);
        }
    }
    best
}

/// Minimizes `p` from `x0`.
///
/// Always returns the best point found. When `x0` is feasible the returned objective never
/// exceeds `objective(x0)` and the returned point stays feasible.
pub fn minimize<T: Scalar, P: Problem<T> + ?Sized>(
    p: &mut P,
    x0: &[T],
    s: &OptimizerSettings,
) -> Solution<T> {
    let lo = p.lower().to_vec();
    let hi = p.upper().to_vec();
    let m = p.num_constraints();
    let mut cbuf = vec![T::zero(); m];
    let mut evaluations = 0usize;
    let target = T::of(10.0 * s.tol);

    let mut start = x0.to_vec();
    project(&mut start, &lo, &hi);

    let x = if m == 0 {
        let mut f = |x: &[T]| {
            evaluations += 1;
            p.objective(x)
        };
        spg(&mut f, start.clone(), &lo, &hi, s).0
    } else {
        let mut x = start.clone();
        for mu in PENALTY_SCHEDULE {
            let mu = T::of(mu);
            let mut merit = |x: &[T]| {
                evaluations += 1;
                let fx = p.objective(x);
                p.constraints(x, &mut cbuf);
                fx + mu * violation_sq(&cbuf, target)
            };
            x = spg(&mut merit, x, &lo, &hi, s).0;
        }
        p.constraints(&x, &mut cbuf);
        if cbuf.iter().any(|c| !(*c > T::zero())) {
            let mut residual = |x: &[T]| {
                evaluations += 1;
                p.constraints(x, &mut cbuf);
                violation_sq(&cbuf, target)
            };
            x = spg(&mut residual, x, &lo, &hi, s).0;
        }
        x
    };

    let mut sol = assess(p, x, &mut cbuf);
    if sol.x != start {
        let initial = assess(p, start, &mut cbuf);
        if initial.feasible && !(sol.feasible && sol.value <= initial.value) {
            sol = initial;
        }
    }
    sol.evaluations = evaluations + 2;
    sol
}

fn violation_sq<T: Scalar>(c: &[T], target: T) -> T {
    c.iter()
        .map(|&ci| {
            let v = (target - ci).max(T::zero());
            v * v
        })
        .sum()
}

fn assess<T: Scalar, P: Problem<T> + ?Sized>(p: &mut P, x: Vec<T>, cbuf: &mut [T]) -> Solution<T> {
    let value = p.objective(&x);
    p.constraints(&x, cbuf);
    let min_constraint = cbuf.iter().copied().fold(T::infinity(), T::min);
    Solution {
        feasible: cbuf.iter().all(|c| *c > T::zero()),
        x,
        value,
        min_constraint,
        evaluations: 0,
    }
}

/// Runs [`minimize`] from each start in order, keeping the best solution; stops early once
/// `good_enough` accepts a result.
pub fn minimize_multistart<T: Scalar, P: Problem<T> + ?Sized>(
    p: &mut P,
    starts: impl IntoIterator<Item = Vec<T>>,
    s: &OptimizerSettings,
    mut good_enough: impl FnMut(&mut P, &Solution<T>) -> bool,
) -> Option<(Solution<T>, usize)> {
    let mut best: Option<Solution<T>> = None;
    let mut used = 0;
    let mut evaluations = 0;
    for x0 in starts {
        used += 1;
        let sol = minimize(p, &x0, s);
        evaluations += sol.evaluations;
        let done = good_enough(p, &sol);
        if best.as_ref().is_none_or(|b| sol.better_than(b)) {
            best = Some(sol);
        }
        if done {
            break;
        }
    }
    best.map(|mut b| {
        b.evaluations = evaluations;
        (b, used)
    })
}

/// Uniform random point in `[lo, hi]`.
pub fn random_point<T: Scalar>(rng: &mut ChaCha8Rng, lo: &[T], hi: &[T]) -> Vec<T> {
    lo.iter()
        .zip(hi)
        .map(|(l, h)| {
            let r: f64 = rng.random();
            *l + (*h - *l) * T::of(r)
        })
        .collect()
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> OptimizerSettings {
        OptimizerSettings::default()
    }

    #[test]
    fn convex_quadratic() {
        let mut p = NlpProblem::new(vec![-1.0, -1.0], vec![1.0, 1.0], |x: &[f64]| {
            x[0] * x[0] + x[1] * x[1]
        })
        .unwrap();
        let sol = minimize(&mut p, &[0.5, 0.5], &settings());
        assert!(sol.feasible);
        assert!(sol.x.iter().all(|v| v.abs() < 1e-5), "{:?}", sol.x);
        assert!(sol.value < 1e-9);
    }

    #[test]
    fn constrained_linear_hits_boundary() {
        // Oracle: 1-D grid search for max x on [0, 1] with 0.5 - x > 0.
        let grid_best = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .filter(|x| 0.5 - x > 0.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p = NlpProblem::new(vec![0.0], vec![1.0], |x: &[f64]| -x[0])
            .unwrap()
            .constraint(|x: &[f64]| 0.5 - x[0]);
        let sol = minimize(&mut p, &[0.1], &settings());
        assert!(sol.feasible);
        assert!(sol.x[0] < 0.5);
        assert!((sol.x[0] - grid_best).abs() < 1e-3, "{} vs {grid_best}", sol.x[0]);
    }

    #[test]
    fn optimal_start_never_worsens() {
        let mut p = NlpProblem::new(vec![-1.0, -1.0], vec![1.0, 1.0], |x: &[f64]| {
            (x[0] - 0.2).powi(2) + (x[1] + 0.1).powi(2)
        })
        .unwrap();
        let sol = minimize(&mut p, &[0.2, -0.1], &settings());
        assert!(sol.value <= 0.0);
    }

    #[test]
    fn rosenbrock_in_box() {
        let mut p = NlpProblem::new(vec![-2.0, -2.0], vec![2.0, 2.0], |x: &[f64]| {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        })
        .unwrap();
        let s = OptimizerSettings {
            max_iters: 2000,
            ..settings()
        };
        let sol = minimize(&mut p, &[-1.2, 1.0], &s);
        assert!((sol.x[0] - 1.0).abs() < 1e-2 && (sol.x[1] - 1.0).abs() < 2e-2, "{:?}", sol.x);
    }

    #[test]
    fn infeasible_problem_reports_flag() {
        let mut p = NlpProblem::new(vec![0.0], vec![1.0], |x: &[f64]| x[0])
            .unwrap()
            .constraint(|x: &[f64]| x[0] - 2.0);
        let sol = minimize(&mut p, &[0.5], &settings());
        assert!(!sol.feasible);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonconvex_feasible_set() {
        // Project (0.1, 0) onto the outside of the unit disk, within [-2, 2]^2.
        let mut p = NlpProblem::new(vec![-2.0, -2.0], vec![2.0, 2.0], |x: &[f64]| {
            (x[0] - 0.1).powi(2) + x[1] * x[1]
        })
        .unwrap()
        .constraint(|x: &[f64]| x[0] * x[0] + x[1] * x[1] - 1.0);
        let sol = minimize(&mut p, &[0.1, 0.0], &settings());
        assert!(sol.feasible);
        assert!((sol.x[0] - 1.0).abs() < 1e-3 && sol.x[1].abs() < 1e-3, "{:?}", sol.x);
    }

    #[test]
    fn multistart_stops_when_accepted() {
        let mut p = NlpProblem::new(vec![-1.0], vec![1.0], |x: &[f64]| x[0] * x[0]).unwrap();
        let starts = vec![vec![0.5], vec![-0.5], vec![0.9]];
        let (sol, used) =
            minimize_multistart(&mut p, starts, &settings(), |_, s| s.value < 1e-6).unwrap();
        assert_eq!(used, 1);
        assert!(sol.value < 1e-6);
    }

    #[test]
    fn settings_validation() {
        assert!(settings().validate().is_ok());
        let bad = OptimizerSettings {
            restarts: 0,
            ..settings()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn works_in_f32() {
        let mut p = NlpProblem::new(vec![-1.0f32], vec![1.0], |x: &[f32]| (x[0] - 0.25) * (x[0] - 0.25))
            .unwrap();
        let s = OptimizerSettings {
            grad_step: 1e-3,
            tol: 1e-5,
            ..settings()
        };
        let sol = minimize(&mut p, &[0.9], &s);
        assert!((sol.x[0] - 0.25).abs() < 1e-3);
    }
}
