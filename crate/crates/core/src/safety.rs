//! Discrete-time exponential control barrier functions and the minimal-deviation safety filter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{diagonal_qp, minimize, Halfspace, OptimizerSettings, Problem, MAX_QP_DIM};
use crate::scalar::Scalar;
use crate::systems::SystemModel;

/// Required CBF margin; the strict inequality `> 0` is enforced as `>= EPS_CBF`.
pub const EPS_CBF: f64 = 1e-6;

/// Step cap as a fraction of the control range, so iterates cannot tunnel through an obstacle.
const FILTER_MAX_STEP: f64 = 0.05;
const SQP_ITERS: usize = 60;
const SQP_GRAD_STEP: f64 = 1e-7;
/// Steps shorter than this end the polish.
const SQP_MIN_STEP: f64 = 1e-12;
/// Extra margin demanded of the linearized constraints, absorbing curvature of the true ones.
const SQP_LINEAR_BUFFER: f64 = 1e-7;
/// Feasible grid points (cheapest first) used as extra starts.
const GRID_STARTS: usize = 6;
/// Minimum index distance between two grid starts.
const SEED_SEPARATION: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SafetyError {
    #[error("state has {got} components, barriers need at least 2")]
    Dimension { got: usize },
    #[error("invalid barrier set: {0}")]
    InvalidSet(String),
    #[error("no admissible control satisfies barriers {violated:?}")]
    Infeasible { violated: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    AvoidDisk,
    StayInDisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barrier<T> {
    pub kind: BarrierKind,
    pub center: [T; 2],
    pub radius: T,
}

impl<T: Scalar> Barrier<T> {
    pub fn avoid_disk(center: [T; 2], radius: T) -> Self {
        Self {
            kind: BarrierKind::AvoidDisk,
            center,
            radius,
        }
    }

    pub fn stay_in_disk(center: [T; 2], radius: T) -> Self {
        Self {
            kind: BarrierKind::StayInDisk,
            center,
            radius,
        }
    }

    /// `b(q)` on the first two state components; no dimension check.
    pub fn value_unchecked(&self, q: &[T]) -> T {
        let dx = q[0] - self.center[0];
        let dy = q[1] - self.center[1];
        let d2 = dx * dx + dy * dy;
        let r2 = self.radius * self.radius;
        match self.kind {
            BarrierKind::AvoidDisk => d2 - r2,
            BarrierKind::StayInDisk => r2 - d2,
        }
    }
}

pub fn barrier_value<T: Scalar>(b: &Barrier<T>, q: &[T]) -> Result<T, SafetyError> {
    if q.len() < 2 {
        return Err(SafetyError::Dimension { got: q.len() });
    }
    Ok(b.value_unchecked(q))
}

/// `b(q_next) + (alpha - 1) b(q_now)`; nonnegative iff the one-step condition holds.
pub fn cbf_margin<T: Scalar>(
    b: &Barrier<T>,
    alpha: T,
    q_now: &[T],
    q_next: &[T],
) -> Result<T, SafetyError> {
    Ok(barrier_value(b, q_next)? + (alpha - T::one()) * barrier_value(b, q_now)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSet<T> {
    pub barriers: Vec<Barrier<T>>,
    pub alpha: T,
    pub deviation_weights: Vec<T>,
}

impl<T: Scalar> BarrierSet<T> {
    pub fn new(
        barriers: Vec<Barrier<T>>,
        alpha: T,
        deviation_weights: Vec<T>,
    ) -> Result<Self, SafetyError> {
        let set = Self {
            barriers,
            alpha,
            deviation_weights,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return Err(SafetyError::InvalidSet(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.deviation_weights.is_empty()
            || self.deviation_weights.iter().any(|w| !(*w > T::zero()))
        {
            return Err(SafetyError::InvalidSet(
                "deviation weights must be positive".into(),
            ));
        }
        if self.barriers.iter().any(|b| !(b.radius > T::zero())) {
            return Err(SafetyError::InvalidSet("barrier radius must be positive".into()));
        }
        Ok(())
    }

    /// Smallest barrier value at `q` (`+inf` for an empty set).
    pub fn min_value(&self, q: &[T]) -> T {
        self.barriers
            .iter()
            .map(|b| b.value_unchecked(q))
            .fold(T::infinity(), T::min)
    }

    /// Indices of barriers whose margin is below [`EPS_CBF`] for the transition `q -> q_next`.
    pub fn violated(&self, q: &[T], q_next: &[T]) -> Vec<usize> {
        let eps = T::of(EPS_CBF);
        let a1 = self.alpha - T::one();
        self.barriers
            .iter()
            .enumerate()
            .filter(|(_, b)| !(b.value_unchecked(q_next) + a1 * b.value_unchecked(q) >= eps))
            .map(|(i, _)| i)
            .collect()
    }
}

struct FilterProblem<'a, T> {
    model: &'a SystemModel<T>,
    q: &'a [T],
    u_ref: &'a [T],
    bs: &'a BarrierSet<T>,
    next: Vec<T>,
    now: Vec<T>,
}

impl<T: Scalar> Problem<T> for FilterProblem<'_, T> {
    fn dim(&self) -> usize {
        self.u_ref.len()
    }

    fn lower(&self) -> &[T] {
        self.model.bounds().lower()
    }

    fn upper(&self) -> &[T] {
        self.model.bounds().upper()
    }

    fn objective(&mut self, u: &[T]) -> T {
        u.iter()
            .zip(self.u_ref)
            .zip(&self.bs.deviation_weights)
            .map(|((u, r), w)| *w * (*u - *r) * (*u - *r))
            .sum()
    }

    fn num_constraints(&self) -> usize {
        self.bs.barriers.len()
    }

    fn constraints(&mut self, u: &[T], out: &mut [T]) {
        self.model.step_into(self.q, u, &mut self.next);
        let eps = T::of(EPS_CBF);
        for (o, (b, now)) in out.iter_mut().zip(self.bs.barriers.iter().zip(&self.now)) {
            *o = b.value_unchecked(&self.next) + (self.bs.alpha - T::one()) * *now - eps;
        }
    }
}

/// Points per axis of the seeding grid; coarser in higher dimensions.
fn grid_resolution(dim: usize) -> usize {
    match dim {
        0..=2 => 101,
        3 => 21,
        _ => 5,
    }
}

/// Cheapest feasible points of a regular grid over the control box, at least [`SEED_SEPARATION`]
/// cells apart so that different feasible pockets get a start.
fn grid_seeds<T: Scalar>(p: &mut FilterProblem<'_, T>, lo: &[T], hi: &[T]) -> Vec<Vec<T>> {
    let n = lo.len();
    let g = grid_resolution(n);
    let mut idx = vec![0usize; n];
    let mut u = vec![T::zero(); n];
    let mut c = vec![T::zero(); p.num_constraints()];
    let mut feasible: Vec<(T, Vec<usize>, Vec<T>)> = Vec::new();
    loop {
        for j in 0..n {
            u[j] = lo[j] + (hi[j] - lo[j]) * T::of(idx[j] as f64 / (g - 1) as f64);
        }
        p.constraints(&u, &mut c);
        if c.iter().all(|v| *v > T::zero()) {
            feasible.push((p.objective(&u), idx.clone(), u.clone()));
        }
        let mut j = 0;
        while j < n {
            idx[j] += 1;
            if idx[j] < g {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    feasible.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut chosen: Vec<(Vec<usize>, Vec<T>)> = Vec::new();
    for (_, i, u) in feasible {
        if chosen.len() == GRID_STARTS {
            break;
        }
        let far = chosen
            .iter()
            .all(|(k, _)| k.iter().zip(&i).any(|(a, b)| a.abs_diff(*b) >= SEED_SEPARATION));
        if far {
            chosen.push((i, u));
        }
    }
    chosen.into_iter().map(|(_, u)| u).collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// `x + d` clamped to the box.
fn offset<T: Scalar>(x: &[T], d: &[T], lo: &[T], hi: &[T]) -> Vec<T> {
    (0..x.len()).map(|j| (x[j] + d[j]).max(lo[j]).min(hi[j])).collect()
}

/// QP step from `x` for margins linearized as `c_i + g_i . d`, inside the box and the trust radius.
#[allow(clippy::too_many_arguments)]
fn sqp_step<T: Scalar>(
    grads: &[Vec<T>],
    c: &[T],
    w: &[T],
    target: &[T],
    lo: &[T],
    hi: &[T],
    x: &[T],
    radius: T,
) -> Option<Vec<T>> {
    let n = x.len();
    let mut rows: Vec<Halfspace<T>> = grads
        .iter()
        .zip(c)
        .map(|(g, ci)| Halfspace { a: g.clone(), b: T::of(SQP_LINEAR_BUFFER) - *ci })
        .collect();
    for j in 0..n {
        let mut e = vec![T::zero(); n];
        e[j] = T::one();
        rows.push(Halfspace { a: e.clone(), b: (lo[j] - x[j]).max(-radius) });
        e[j] = -T::one();
        rows.push(Halfspace { a: e, b: -(hi[j] - x[j]).min(radius) });
    }
    diagonal_qp(w, target, &rows, T::of(1e-12))
}

/// Minimizes the weighted deviation `Σ w_j (u_j − u_ref_j)²` over the control box subject to every
/// CBF margin being at least [`EPS_CBF`].
///
/// A feasible `u_ref` is returned unchanged. Otherwise candidates come from a penalty solve started
/// at `u_ref`, the clamped zero control and the cheapest feasible points of a coarse grid over the
/// control box; each is refined by a trust-region SQP and the closest feasible result is returned.
pub fn solve_safe_control<T: Scalar>(
    model: &SystemModel<T>,
    q: &[T],
    u_ref: &[T],
    bs: &BarrierSet<T>,
) -> Result<Vec<T>, SafetyError> {
    bs.validate()?;
    if q.len() != model.state_dim() || q.len() < 2 {
        return Err(SafetyError::Dimension { got: q.len() });
    }
    if u_ref.len() != model.control_dim() || bs.deviation_weights.len() != u_ref.len() {
        return Err(SafetyError::InvalidSet(format!(
            "control has {} components, model expects {} and weights {}",
            u_ref.len(),
            model.control_dim(),
            bs.deviation_weights.len()
        )));
    }
    let bounds = model.bounds();
    let mut next = vec![T::zero(); q.len()];
    if bounds.contains(u_ref) {
        model.step_into(q, u_ref, &mut next);
        if bs.violated(q, &next).is_empty() {
            return Ok(u_ref.to_vec());
        }
    }

    let mut p = FilterProblem {
        model,
        q,
        u_ref,
        bs,
        now: bs.barriers.iter().map(|b| b.value_unchecked(q)).collect(),
        next: next.clone(),
    };
    let s = OptimizerSettings {
        max_step: Some(FILTER_MAX_STEP),
        ..OptimizerSettings::default()
    };
    let mut start = u_ref.to_vec();
    bounds.clamp(&mut start);
    let mut candidates = Vec::new();
    let sol = minimize(&mut p, &start, &s);
    if sol.feasible {
        candidates.push(sol.x.clone());
    }
    // Zero control clamped to the box: stationary for both models, hence safe from a safe state.
    let mut zero = vec![T::zero(); u_ref.len()];
    bounds.clamp(&mut zero);
    candidates.push(zero);
    candidates.extend(grid_seeds(&mut p, bounds.lower(), bounds.upper()));

    let mut best: Option<(T, Vec<T>)> = None;
    for x in candidates {
        let x = sqp_polish(&mut p, x);
        if !is_feasible(&mut p, &x) {
            continue;
        }
        let cost = p.objective(&x);
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, x));
        }
    }
    let best = match best {
        Some((_, x)) => x,
        None => sol.x,
    };
    model.step_into(q, &best, &mut next);
    let violated = bs.violated(q, &next);
    if !bounds.contains(&best) || !violated.is_empty() {
        return Err(SafetyError::Infeasible { violated });
    }
    Ok(best)
}

fn is_feasible<T: Scalar>(p: &mut FilterProblem<'_, T>, u: &[T]) -> bool {
    let mut c = vec![T::zero(); p.num_constraints()];
    p.constraints(u, &mut c);
    c.iter().all(|v| *v >= T::zero())
}

/// Trust-region SQP from a feasible point: linearized margins, exact QP step, and only feasible
/// steps that lower the deviation are accepted. Converges to a KKT point of the feasible
/// component containing `x`; returned unchanged when infeasible or the control has more than
/// [`MAX_QP_DIM`] components.
fn sqp_polish<T: Scalar>(p: &mut FilterProblem<'_, T>, mut x: Vec<T>) -> Vec<T> {
    let n = x.len();
    let m = p.num_constraints();
    if n > MAX_QP_DIM || !is_feasible(p, &x) {
        return x;
    }
    let lo = p.lower().to_vec();
    let hi = p.upper().to_vec();
    let w = p.bs.deviation_weights.clone();
    let h = T::of(SQP_GRAD_STEP);
    let floor = T::of(SQP_MIN_STEP);
    let mut radius = (0..n).map(|j| hi[j] - lo[j]).fold(T::zero(), T::max) * T::of(0.25);
    let mut fx = p.objective(&x);
    let mut c = vec![T::zero(); m];
    let mut cp = vec![T::zero(); m];
    let mut cm = vec![T::zero(); m];
    let mut grads = vec![vec![T::zero(); n]; m];
    let mut probe = x.clone();
    let mut trial_c = vec![T::zero(); m];
    for _ in 0..SQP_ITERS {
        p.constraints(&x, &mut c);
        for j in 0..n {
            probe.copy_from_slice(&x);
            probe[j] = x[j] + h;
            p.constraints(&probe, &mut cp);
            probe[j] = x[j] - h;
            p.constraints(&probe, &mut cm);
            for i in 0..m {
                grads[i][j] = (cp[i] - cm[i]) / (h + h);
            }
        }
        let target: Vec<T> = (0..n).map(|j| p.u_ref[j] - x[j]).collect();
        let mut accepted = false;
        while radius > floor {
            let Some(d) = sqp_step(&grads, &c, &w, &target, &lo, &hi, &x, radius) else {
                radius *= T::of(0.5);
                continue;
            };
            let step = d.iter().fold(T::zero(), |a, v| a.max(v.abs()));
            if step <= floor {
                return x;
            }
            let mut trial = offset(&x, &d, &lo, &hi);
            p.constraints(&trial, &mut trial_c);
            if trial_c.iter().any(|v| *v < T::zero()) {
                // Second-order correction: keep the linear model but shift it by the curvature
                // observed at the trial point.
                let shifted: Vec<T> = (0..m).map(|i| trial_c[i] - dot(&grads[i], &d)).collect();
                if let Some(d2) = sqp_step(&grads, &shifted, &w, &target, &lo, &hi, &x, radius) {
                    trial = offset(&x, &d2, &lo, &hi);
                    p.constraints(&trial, &mut trial_c);
                }
            }
            let ft = p.objective(&trial);
            if trial_c.iter().all(|v| *v >= T::zero()) && ft < fx {
                x = trial;
                fx = ft;
                radius = (step * T::of(2.0)).max(radius);
                accepted = true;
                break;
            }
            radius = step * T::of(0.5);
        }
        if !accepted {
            break;
        }
    }
    x
}
