//! Reference-control problems: maximize AGM robustness of the (history-prefixed) rollout minus
//! a quadratic control cost, over the remaining horizon or over an MPC window.

use super::{
    minimize_multistart, random_point, seeded_rng, OptimError, OptimizerSettings, Problem,
};
use crate::scalar::Scalar;
use crate::stl::{eval, Formula, Interval, StlError, Trace};
use crate::systems::SystemModel;

pub fn flatten_controls<T: Scalar, C: AsRef<[T]>>(controls: &[C]) -> Vec<T> {
    controls.iter().flat_map(|u| u.as_ref().iter().copied()).collect()
}

/// # Panics
/// If `m == 0` or `x.len()` is not a multiple of `m`.
pub fn unflatten_controls<T: Scalar>(x: &[T], m: usize) -> Vec<Vec<T>> {
    assert!(m > 0 && x.len().is_multiple_of(m), "length {} not a multiple of {m}", x.len());
    x.chunks_exact(m).map(<[T]>::to_vec).collect()
}

/// Rollout-based objective shared by both reference problems.
///
/// The trace buffer holds the fixed prefix (history plus current state); each evaluation
/// rewrites the tail from the decision vector.
struct RolloutProblem<'a, T> {
    model: &'a SystemModel<T>,
    lambda: T,
    buf: Trace<T>,
    prefix: usize,
    next: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    objective: Formula<T>,
    objective_time: usize,
    constraint: Option<&'a Formula<T>>,
    constraint_times: Vec<usize>,
}

impl<'a, T: Scalar> RolloutProblem<'a, T> {
    fn new(
        model: &'a SystemModel<T>,
        lambda: T,
        prefix: Trace<T>,
        steps: usize,
        objective: Formula<T>,
        objective_time: usize,
    ) -> Self {
        let b = model.bounds();
        let lower = (0..steps).flat_map(|_| b.lower().iter().copied()).collect();
        let upper = (0..steps).flat_map(|_| b.upper().iter().copied()).collect();
        Self {
            model,
            lambda,
            prefix: prefix.len(),
            next: vec![T::zero(); prefix.dim()],
            buf: prefix,
            lower,
            upper,
            objective,
            objective_time,
            constraint: None,
            constraint_times: Vec::new(),
        }
    }

    fn fill(&mut self, x: &[T]) {
        self.buf.truncate(self.prefix);
        for u in x.chunks_exact(self.model.control_dim()) {
            self.model.step_into(self.buf.last().unwrap(), u, &mut self.next);
            self.buf.push(&self.next);
        }
    }

    /// Validates coverage once against a full-length buffer.
    fn validate(&mut self) -> Result<(), StlError> {
        let x = self.lower.clone();
        self.fill(&x);
        eval::AgmEvaluator::new(&self.objective, &self.buf, self.objective_time)?;
        if let Some(c) = self.constraint {
            for &t in &self.constraint_times {
                eval::AgmEvaluator::new(c, &self.buf, t)?;
            }
        }
        Ok(())
    }

    fn cost(&self, x: &[T]) -> T {
        x.iter().map(|v| *v * *v).sum::<T>() * T::of(0.5)
    }

    fn robustness_of(&mut self, x: &[T]) -> T {
        self.fill(x);
        eval::agm(&self.objective, &self.buf, self.objective_time)
    }
}

impl<T: Scalar> Problem<T> for RolloutProblem<'_, T> {
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
        let eta = self.robustness_of(x);
        self.lambda * self.cost(x) - eta
    }

    fn num_constraints(&self) -> usize {
        self.constraint_times.len()
    }

    fn constraints(&mut self, x: &[T], out: &mut [T]) {
        if let Some(c) = self.constraint {
            self.fill(x);
            for (o, &t) in out.iter_mut().zip(&self.constraint_times) {
                *o = eval::agm(c, &self.buf, t);
            }
        }
    }
}

/// Starting points in the documented order: warm start, zero controls, uniform random draws.
fn starts<T: Scalar>(
    warm: Option<Vec<T>>,
    lower: &[T],
    upper: &[T],
    s: &OptimizerSettings,
) -> impl Iterator<Item = Vec<T>> {
    let mut rng = seeded_rng(s.seed);
    let zero: Vec<T> = lower
        .iter()
        .zip(upper)
        .map(|(l, h)| T::zero().max(*l).min(*h))
        .collect();
    let (lower, upper) = (lower.to_vec(), upper.to_vec());
    warm.into_iter()
        .chain(std::iter::once(zero))
        .chain(std::iter::repeat_with(move || random_point(&mut rng, &lower, &upper)))
        .take(s.restarts)
}

/// Early-stop rule for [`starts`]: the deterministic starts (warm, zero) always run; random
/// restarts continue only until some start has been accepted, or to the end without `early_stop`.
fn stop_after_deterministic(warm: bool, s: &OptimizerSettings) -> impl FnMut(bool) -> bool {
    let deterministic = if s.early_stop { 1 + usize::from(warm) } else { usize::MAX };
    let mut seen = 0;
    let mut accepted = false;
    move |ok| {
        seen += 1;
        accepted |= ok;
        accepted && seen >= deterministic
    }
}

fn warm_vector<T: Scalar>(
    warm: &Option<Vec<Vec<T>>>,
    steps: usize,
    model: &SystemModel<T>,
) -> Option<Vec<T>> {
    let w = warm.as_ref()?;
    let last = w.last()?.clone();
    let mut x: Vec<T> = w
        .iter()
        .chain(std::iter::repeat(&last))
        .take(steps)
        .flat_map(|u| u.iter().copied())
        .collect();
    if x.len() != steps * model.control_dim() {
        return None;
    }
    let b = model.bounds();
    for u in x.chunks_exact_mut(model.control_dim()) {
        b.clamp(u);
    }
    Some(x)
}

/// Full-horizon reference problem at time `k = history.len()`.
#[derive(Debug, Clone)]
pub struct ReferenceProblem<'a, T> {
    pub model: &'a SystemModel<T>,
    pub formula: &'a Formula<T>,
    /// Weight of the control cost `½ Σ ‖u_j‖²`.
    pub lambda: T,
    /// States at times `0..k`; empty at `k = 0`.
    pub history: Trace<T>,
    /// Current state `q_k`.
    pub state: Vec<T>,
    /// Final time `K`.
    pub horizon_end: usize,
    /// Previous plan; shifted plans shorter than the horizon are padded with their last control.
    pub warm_start: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> ReferenceProblem<'_, T> {
    pub fn time(&self) -> usize {
        self.history.len()
    }

    fn prefix(&self) -> Result<Trace<T>, OptimError> {
        let k = self.time();
        if !self.history.is_empty() && self.history.start() != 0 {
            return Err(StlError::HistoryStart(self.history.start()).into());
        }
        if self.state.len() != self.model.state_dim()
            || (!self.history.is_empty() && self.history.dim() != self.state.len())
        {
            return Err(OptimError::Problem("state dimension mismatch".into()));
        }
        if k >= self.horizon_end {
            return Err(OptimError::Problem(format!(
                "time {k} is not before the final time {}",
                self.horizon_end
            )));
        }
        if self.horizon_end < self.formula.horizon() {
            return Err(OptimError::Problem(format!(
                "final time {} shorter than the formula horizon {}",
                self.horizon_end,
                self.formula.horizon()
            )));
        }
        let mut prefix = self.history.clone();
        prefix.push(&self.state);
        Ok(prefix)
    }

    fn build(&self) -> Result<RolloutProblem<'_, T>, OptimError> {
        let steps = self.horizon_end - self.time();
        let mut p = RolloutProblem::new(
            self.model,
            self.lambda,
            self.prefix()?,
            steps,
            self.formula.clone(),
            0,
        );
        p.validate()?;
        Ok(p)
    }

    /// Maximization-form objective `η − λ·J` at a flattened control sequence.
    pub fn objective_value(&self, x: &[T]) -> Result<T, OptimError> {
        let mut p = self.build()?;
        if x.len() != p.dim() {
            return Err(OptimError::Problem("decision vector length mismatch".into()));
        }
        Ok(-p.objective(x))
    }

    /// AGM robustness of `history ∥ rollout(q_k, x)`.
    pub fn robustness(&self, x: &[T]) -> Result<T, OptimError> {
        let mut p = self.build()?;
        Ok(p.robustness_of(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution<T> {
    /// `u_k … u_{K-1}`.
    pub controls: Vec<Vec<T>>,
    pub robustness: T,
    /// `η − λ·J` at the returned controls.
    pub objective: T,
    pub starts_used: usize,
    pub evaluations: usize,
}

/// Solves the full-horizon reference problem.
///
/// Starts are tried in order (warm start, zero controls, random draws, `s.restarts` in total). The
/// warm and zero starts always run; random draws stop once some start attains positive
/// robustness. The best sequence found is returned even when its robustness is negative.
pub fn solve_reference_control<T: Scalar>(
    rp: &ReferenceProblem<'_, T>,
    s: &OptimizerSettings,
) -> Result<ReferenceSolution<T>, OptimError> {
    s.validate()?;
    let mut p = rp.build()?;
    let steps = rp.horizon_end - rp.time();
    let warm = warm_vector(&rp.warm_start, steps, rp.model);
    let mut stop = stop_after_deterministic(warm.is_some(), s);
    let starts = starts(warm, &p.lower.clone(), &p.upper.clone(), s);
    let (sol, used) = minimize_multistart(&mut p, starts, s, |p, sol| {
        stop(p.robustness_of(&sol.x) > T::zero())
    })
    .expect("at least one start");
    let robustness = p.robustness_of(&sol.x);
    Ok(ReferenceSolution {
        controls: unflatten_controls(&sol.x, rp.model.control_dim()),
        robustness,
        objective: -sol.value,
        starts_used: used,
        evaluations: sol.evaluations,
    })
}

/// Receding-horizon problem for `G[0,k1] φ` at time `k`.
///
/// Windows `j ∈ [0, k1]` each need samples `j ..= j + h` with `h = hrz(φ)`. At time `k` the
/// objective is the AGM robustness of `G[0,·] φ` over windows `k ..= min(k + h_p, k1)`; windows
/// started in the last `h − 1` steps are kept positive as constraints. Near the end of the task the
/// planning horizon shrinks to the final time, and once no window starts at or after `k` the
/// remaining constraint windows double as the objective.
#[derive(Debug, Clone)]
pub struct MpcProblem<'a, T> {
    pub model: &'a SystemModel<T>,
    /// Inner formula `φ`.
    pub phi: &'a Formula<T>,
    pub k1: usize,
    /// Prediction horizon `h_p`.
    pub h_p: usize,
    pub lambda: T,
    /// The last `min(k, hrz(φ) − 1)` states, starting at absolute time `k − len`.
    pub history: Trace<T>,
    pub state: Vec<T>,
    pub k: usize,
    pub warm_start: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> MpcProblem<'_, T> {
    pub fn h_phi(&self) -> usize {
        self.phi.horizon()
    }

    /// Final time `K = k1 + hrz(φ)`.
    pub fn final_time(&self) -> usize {
        self.k1 + self.h_phi()
    }

    /// Number of controls optimized at this time, `min(h_p + hrz(φ), K − k)`.
    pub fn decision_steps(&self) -> usize {
        (self.h_p + self.h_phi()).min(self.final_time().saturating_sub(self.k))
    }

    /// Required history length `min(k, hrz(φ) − 1)`.
    pub fn history_len(&self) -> usize {
        self.k.min(self.h_phi().saturating_sub(1))
    }

    /// Start times of the recursive-feasibility windows.
    pub fn constraint_windows(&self) -> std::ops::Range<usize> {
        let first = (self.k + 1).saturating_sub(self.h_phi().max(1));
        first.min(self.k)..self.k.min(self.k1 + 1)
    }

    /// Start times of the windows maximized at this step.
    pub fn objective_windows(&self) -> std::ops::Range<usize> {
        self.k..(self.k + self.h_p).min(self.k1) + 1
    }

    fn build(&self) -> Result<RolloutProblem<'_, T>, OptimError> {
        let h = self.h_phi();
        if self.h_p + h == 0 {
            return Err(OptimError::Problem("h_p + hrz(phi) must be positive".into()));
        }
        if self.k >= self.final_time() {
            return Err(OptimError::Problem(format!(
                "time {} is not before the final time {}",
                self.k,
                self.final_time()
            )));
        }
        let w = self.history_len();
        let history_ok = if w == 0 {
            self.history.is_empty()
        } else {
            self.history.len() == w && self.history.start() == self.k - w
        };
        if !history_ok {
            return Err(OptimError::Problem(format!(
                "history must hold the {w} states before time {}",
                self.k
            )));
        }
        if self.state.len() != self.model.state_dim() {
            return Err(OptimError::Problem("state dimension mismatch".into()));
        }
        let mut prefix = if w == 0 {
            Trace::empty(self.state.len()).with_start(self.k)
        } else {
            self.history.clone()
        };
        prefix.push(&self.state);

        let objective = self.objective_windows();
        let constraints = self.constraint_windows();
        let (first, last) = if objective.is_empty() {
            (constraints.start, constraints.end - 1)
        } else {
            (objective.start, objective.end - 1)
        };
        let window = Interval::new(0, last - first).expect("ordered window");
        let objective_formula = Formula::always(window, self.phi.clone());
        let mut p = RolloutProblem::new(
            self.model,
            self.lambda,
            prefix,
            self.decision_steps(),
            objective_formula,
            first,
        );
        p.constraint = Some(self.phi);
        p.constraint_times = constraints.collect();
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution<T> {
    /// `u_k … u_{k+H'-1}` with `H'` = [`MpcProblem::decision_steps`].
    pub controls: Vec<Vec<T>>,
    /// Robustness of the objective windows.
    pub robustness: T,
    /// Robustness of `φ` at each constraint window.
    pub constraint_values: Vec<T>,
    pub starts_used: usize,
    pub evaluations: usize,
}

/// Solves the receding-horizon problem; fails when no start satisfies every constraint window.
pub fn solve_reference_control_mpc<T: Scalar>(
    mp: &MpcProblem<'_, T>,
    s: &OptimizerSettings,
) -> Result<MpcSolution<T>, OptimError> {
    s.validate()?;
    let mut p = mp.build()?;
    let warm = warm_vector(&mp.warm_start, mp.decision_steps(), mp.model);
    let mut stop = stop_after_deterministic(warm.is_some(), s);
    let starts = starts(warm, &p.lower.clone(), &p.upper.clone(), s);
    let (sol, used) = minimize_multistart(&mut p, starts, s, |p, sol| {
        stop(sol.feasible && p.robustness_of(&sol.x) > T::zero())
    })
    .expect("at least one start");
    if !sol.feasible {
        return Err(OptimError::MpcInfeasible {
            time: mp.k,
            violation: -sol.min_constraint.as_f64(),
        });
    }
    let mut constraint_values = vec![T::zero(); p.num_constraints()];
    p.constraints(&sol.x, &mut constraint_values);
    Ok(MpcSolution {
        robustness: p.robustness_of(&sol.x),
        controls: unflatten_controls(&sol.x, mp.model.control_dim()),
        constraint_values,
        starts_used: used,
        evaluations: sol.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::PredicateTable;
    use crate::systems::{ControlBounds, ModelKind};

    fn integrator() -> SystemModel<f64> {
        SystemModel::new(
            ModelKind::Integrator,
            ControlBounds::new(vec![-0.6, -0.6], vec![0.6, 0.6]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn flatten_round_trip() {
        let u = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let x = flatten_controls(&u);
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unflatten_controls(&x, 2), u);
    }

    #[test]
    fn trivially_true_last_step_minimizes_cost() {
        let model = integrator();
        let mut t = PredicateTable::new();
        // x + 100 >= 0 holds everywhere reachable
        t.insert_halfplane("Far", vec![1.0], 100.0, 1000.0).unwrap();
        let f = crate::stl::parse_formula("G[0,2]Far", &t).unwrap();
        let hist = Trace::from_states(&[[0.0, 0.0], [0.1, 0.1]], 0).unwrap();
        let rp = ReferenceProblem {
            model: &model,
            formula: &f,
            lambda: 1.0,
            history: hist,
            state: vec![0.2, 0.2],
            horizon_end: 3,
            warm_start: Some(vec![vec![0.5, -0.5]]),
        };
        let sol = solve_reference_control(&rp, &OptimizerSettings::default()).unwrap();
        assert_eq!(sol.controls.len(), 1);
        assert!(sol.controls[0].iter().all(|u| u.abs() < 1e-4), "{:?}", sol.controls);
    }

    #[test]
    fn large_lambda_drives_controls_to_zero() {
        let model = integrator();
        let mut t = PredicateTable::new();
        t.insert_box("Home", &[-1.0, -1.0], &[1.0, 1.0], 2.0).unwrap();
        let f = crate::stl::parse_formula("G[0,4]Home", &t).unwrap();
        let rp = ReferenceProblem {
            model: &model,
            formula: &f,
            lambda: 1e3,
            history: Trace::empty(2),
            state: vec![0.0, 0.0],
            horizon_end: 4,
            warm_start: None,
        };
        let s = OptimizerSettings::default();
        let sol = solve_reference_control(&rp, &s).unwrap();
        let zero = vec![0.0; 8];
        assert!(sol.objective >= rp.objective_value(&zero).unwrap() - 1e-9);
        assert!(sol.controls.iter().flatten().all(|u| u.abs() < 1e-3));
        assert!(sol.robustness > 0.0);
    }

    #[test]
    fn mpc_window_bookkeeping() {
        let model = integrator();
        let mut t = PredicateTable::new();
        t.insert_box("A", &[-1.5, -0.5], &[-0.5, 0.5], 5.0).unwrap();
        t.insert_box("B", &[0.5, -0.5], &[1.5, 0.5], 5.0).unwrap();
        let phi = crate::stl::parse_formula("F[0,3]A & F[0,3]B", &t).unwrap();
        let mk = |k: usize, hist: Trace<f64>| MpcProblem {
            model: &model,
            phi: &phi,
            k1: 7,
            h_p: 0,
            lambda: 1e-6,
            history: hist,
            state: vec![1.0, 0.0],
            k,
            warm_start: None,
        };
        let p0 = mk(0, Trace::empty(2));
        assert_eq!(p0.decision_steps(), 3);
        assert_eq!(p0.decision_steps() * 2, 6);
        assert_eq!(p0.constraint_windows(), 0..0);
        assert_eq!(p0.objective_windows(), 0..1);
        let h = Trace::from_states(&[[0.0, 0.0], [0.0, 0.0]], 3).unwrap();
        let p5 = mk(5, h.clone());
        assert_eq!(p5.constraint_windows().len(), 2);
        assert_eq!(p5.history_len(), 2);
        let p1 = mk(1, Trace::from_states(&[[0.0, 0.0]], 0).unwrap());
        assert_eq!(p1.constraint_windows(), 0..1);
        let h8 = Trace::from_states(&[[0.0, 0.0], [0.0, 0.0]], 6).unwrap();
        let p8 = mk(8, h8);
        assert_eq!(p8.decision_steps(), 2);
        assert!(p8.objective_windows().is_empty());
        assert_eq!(p8.constraint_windows(), 6..8);
        let bad = mk(5, Trace::from_states(&[[0.0, 0.0]], 4).unwrap());
        assert!(matches!(bad.build(), Err(OptimError::Problem(_))));
    }

    #[test]
    fn mpc_first_step_reaches_other_region() {
        let model = integrator();
        let mut t = PredicateTable::new();
        t.insert_box("A", &[-1.5, -0.5], &[-0.5, 0.5], 5.0).unwrap();
        t.insert_box("B", &[0.5, -0.5], &[1.5, 0.5], 5.0).unwrap();
        let phi = crate::stl::parse_formula("F[0,3]A & F[0,3]B", &t).unwrap();
        let mp = MpcProblem {
            model: &model,
            phi: &phi,
            k1: 7,
            h_p: 0,
            lambda: 1e-6,
            history: Trace::empty(2),
            state: vec![1.0, 0.0],
            k: 0,
            warm_start: None,
        };
        let sol = solve_reference_control_mpc(&mp, &OptimizerSettings::default()).unwrap();
        assert_eq!(sol.controls.len(), 3);
        assert!(sol.robustness > 0.0);
        let tr = model.rollout_unchecked(&[1.0, 0.0], &sol.controls);
        assert!(crate::stl::eval_boolean(&phi, &tr, 0).unwrap());
    }
}
