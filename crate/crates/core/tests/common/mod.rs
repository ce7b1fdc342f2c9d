//! Shared generators for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlctl::stl::{Formula, Interval, Predicate, PredicateFn, Trace};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random halfplane predicate `c . q + d >= 0` over the leading `dim` components.
pub fn random_predicate(rng: &mut ChaCha8Rng, dim: usize) -> Formula<f64> {
    let arity = rng.random_range(1..=dim);
    let coeffs: Vec<f64> = (0..arity).map(|_| rng.random_range(-1.0..1.0)).collect();
    let offset = rng.random_range(-0.5..0.5);
    let scale = rng.random_range(0.2..2.0);
    let id: u32 = rng.random();
    Formula::atom(Predicate::new(format!("p{id}"), PredicateFn::Halfplane { coeffs, offset }, scale).unwrap())
}

/// Random formula of depth at most `depth` with horizon at most `budget`.
pub fn random_formula(rng: &mut ChaCha8Rng, depth: usize, budget: usize, dim: usize) -> Formula<f64> {
    if depth == 0 || rng.random_bool(0.2) {
        return if rng.random_bool(0.05) { Formula::True } else { random_predicate(rng, dim) };
    }
    match rng.random_range(0..5) {
        0 => Formula::not(random_formula(rng, depth - 1, budget, dim)),
        1 | 2 => {
            let n = rng.random_range(2..=3);
            let cs = (0..n).map(|_| random_formula(rng, depth - 1, budget, dim)).collect();
            if rng.random_bool(0.5) { Formula::and(cs) } else { Formula::or(cs) }
        }
        _ => {
            let b = rng.random_range(0..=budget);
            let a = rng.random_range(0..=b);
            let inner = random_formula(rng, depth - 1, budget - b, dim);
            let i = Interval::new(a, b).unwrap();
            if rng.random_bool(0.5) { Formula::eventually(i, inner) } else { Formula::always(i, inner) }
        }
    }
}

pub fn random_trace(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Trace<f64> {
    let rows: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    Trace::from_states(&rows, 0).unwrap()
}

/// Scalar signal predicate `s >= 0` with unit scale.
pub fn s_nonneg() -> Formula<f64> {
    Formula::atom(
        Predicate::new("s", PredicateFn::Halfplane { coeffs: vec![1.0], offset: 0.0 }, 1.0).unwrap(),
    )
}

pub fn iv(a: usize, b: usize) -> Interval {
    Interval::new(a, b).unwrap()
}

use stlctl::stl::{eval_boolean, eval_robustness_agm, eval_robustness_traditional};

const SIGN_TOL: f64 = 1e-9;

/// Sign soundness of both quantitative semantics against the boolean oracle on `cases`
/// random (formula, trace) pairs; returns the counterexample descriptions and the number of
/// satisfied and violated cases seen.
pub fn soundness_counterexamples(cases: usize, seed: u64) -> (Vec<String>, usize, usize) {
    let mut rng = rng(seed);
    let mut bad = Vec::new();
    let mut sat = 0;
    for case in 0..cases {
        let dim = rng.random_range(1..=3);
        let f = random_formula(&mut rng, 3, 10, dim);
        let k = rng.random_range(0..3);
        let len = k + f.horizon() + 1 + rng.random_range(0..3);
        let tr = random_trace(&mut rng, len, dim);
        let truth = eval_boolean(&f, &tr, k).unwrap();
        sat += usize::from(truth);
        let agm = eval_robustness_agm(&f, &tr, k).unwrap().value;
        let trad = eval_robustness_traditional(&f, &tr, k).unwrap().value;
        for (name, v) in [("agm", agm), ("traditional", trad)] {
            if (v > SIGN_TOL && !truth) || (v < -SIGN_TOL && truth) {
                bad.push(format!("case {case}: {name} = {v} but boolean = {truth} for {f}"));
            }
        }
        if !(-1.0..=1.0).contains(&agm) {
            bad.push(format!("case {case}: agm = {agm} outside [-1, 1]"));
        }
    }
    (bad, sat, cases - sat)
}

/// Perturbs samples after `k + hrz(f)` and checks that no evaluation at `k` changes.
pub fn horizon_consistency_failures(cases: usize, seed: u64) -> Vec<String> {
    let mut rng = rng(seed);
    let mut bad = Vec::new();
    for case in 0..cases {
        let dim = rng.random_range(1..=3);
        let f = random_formula(&mut rng, 3, 10, dim);
        let k = rng.random_range(0..4);
        let needed = k + f.horizon() + 1;
        let tr = random_trace(&mut rng, needed + 4, dim);
        let mut rows = tr.to_rows();
        for row in rows.iter_mut().skip(needed) {
            for x in row.iter_mut() {
                *x = rng.random_range(-50.0..50.0);
            }
        }
        let perturbed = Trace::from_states(&rows, 0).unwrap();
        let same = eval_boolean(&f, &tr, k).unwrap() == eval_boolean(&f, &perturbed, k).unwrap()
            && eval_robustness_agm(&f, &tr, k).unwrap() == eval_robustness_agm(&f, &perturbed, k).unwrap()
            && eval_robustness_traditional(&f, &tr, k).unwrap()
                == eval_robustness_traditional(&f, &perturbed, k).unwrap();
        if !same {
            bad.push(format!("case {case}: evaluation at {k} changed for {f}"));
        }
    }
    bad
}

/// Largest sample time whose perturbation changes the AGM value at time 0, found by random
/// perturbation of random base traces inside `[lo, hi]` per component.
pub fn dependency_horizon(f: &Formula<f64>, dim: usize, lo: f64, hi: f64, max_t: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut deepest = 0;
    for _ in 0..40 {
        let rows: Vec<Vec<f64>> = (0..=max_t)
            .map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect())
            .collect();
        let base = eval_robustness_agm(f, &Trace::from_states(&rows, 0).unwrap(), 0).unwrap().value;
        for t in (deepest + 1)..=max_t {
            for _ in 0..5 {
                let mut p = rows.clone();
                for x in p[t].iter_mut() {
                    *x = rng.random_range(lo..hi);
                }
                let v = eval_robustness_agm(f, &Trace::from_states(&p, 0).unwrap(), 0).unwrap().value;
                if v != base {
                    deepest = deepest.max(t);
                    break;
                }
            }
        }
    }
    deepest
}

/// One safe-control projection problem.
pub struct ProjectionCase {
    pub model: stlctl::systems::SystemModel<f64>,
    pub q: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub bs: stlctl::safety::BarrierSet<f64>,
}

/// Random safe state with a stay-in disk around it and up to three avoid disks close by.
pub fn random_projection_case(rng: &mut ChaCha8Rng, kind: stlctl::systems::ModelKind) -> ProjectionCase {
    use stlctl::safety::{Barrier, BarrierSet};
    use stlctl::systems::{ControlBounds, ModelKind, SystemModel};
    let (bounds, weights) = match kind {
        ModelKind::Integrator => (ControlBounds::new(vec![-0.6, -0.6], vec![0.6, 0.6]).unwrap(), vec![1.0, 1.0]),
        ModelKind::Unicycle => (ControlBounds::new(vec![0.0, -0.5], vec![1.0, 0.5]).unwrap(), vec![1.0, 0.03]),
    };
    let model = SystemModel::new(kind, bounds).unwrap();
    let mut q: Vec<f64> = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    if kind == ModelKind::Unicycle {
        q.push(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    }
    let mut barriers = Vec::new();
    if rng.random_bool(0.7) {
        let r = q[0].hypot(q[1]) + rng.random_range(0.05..1.0);
        barriers.push(Barrier::stay_in_disk([0.0, 0.0], r));
    }
    for _ in 0..rng.random_range(0..=3) {
        let radius = rng.random_range(0.2..0.8);
        let d = radius + rng.random_range(0.02..0.8);
        // Biased towards the heading for the unicycle so the filter has work to do.
        let a = match kind {
            ModelKind::Unicycle => q[2] + rng.random_range(-1.2..1.2),
            ModelKind::Integrator => rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        barriers.push(Barrier::avoid_disk([q[0] + d * a.cos(), q[1] + d * a.sin()], radius));
    }
    let alpha = rng.random_range(0.3..=1.0);
    let bs = BarrierSet::new(barriers, alpha, weights).unwrap();
    let u_ref = model
        .bounds()
        .lower()
        .iter()
        .zip(model.bounds().upper())
        .map(|(&l, &u)| rng.random_range(l..=u))
        .collect();
    ProjectionCase { model, q, u_ref, bs }
}

/// Weighted squared deviation from the reference.
pub fn deviation(c: &ProjectionCase, u: &[f64]) -> f64 {
    u.iter()
        .zip(&c.u_ref)
        .zip(&c.bs.deviation_weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum()
}

/// Smallest CBF margin of `u` over the barrier set (`+inf` without barriers).
pub fn min_margin(c: &ProjectionCase, u: &[f64]) -> f64 {
    let next = c.model.step(&c.q, u).unwrap();
    c.bs
        .barriers
        .iter()
        .map(|b| stlctl::safety::cbf_margin(b, c.bs.alpha, &c.q, &next).unwrap())
        .fold(f64::INFINITY, f64::min)
}

/// Exhaustive search over a grid of spacing `h` on the control box; best feasible point.
pub fn grid_oracle(c: &ProjectionCase, h: f64) -> Option<(Vec<f64>, f64)> {
    let (lo, hi) = (c.model.bounds().lower(), c.model.bounds().upper());
    let n: Vec<usize> = lo.iter().zip(hi).map(|(l, u)| ((u - l) / h).round() as usize).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for i in 0..=n[0] {
        for j in 0..=n[1] {
            let u = [lo[0] + i as f64 * h, lo[1] + j as f64 * h];
            let cost = deviation(c, &u);
            if best.as_ref().is_some_and(|b| cost >= b.1) || min_margin(c, &u) < 0.0 {
                continue;
            }
            best = Some((u.to_vec(), cost));
        }
    }
    best
}

/// Outcome of comparing the projection against the grid oracle on random problems.
#[derive(Debug, Default)]
pub struct ProjectionStats {
    pub cases: usize,
    /// Cases where the reference itself was unsafe.
    pub active: usize,
    pub max_distance: f64,
    pub failures: Vec<String>,
}

/// The projection passes a case when it is feasible and either lies within `tol` of the grid
/// minimizer or is at least as cheap (several minimizers tie).
pub fn projection_vs_grid(kind: stlctl::systems::ModelKind, cases: usize, seed: u64, tol: f64) -> ProjectionStats {
    let mut r = rng(seed);
    let mut st = ProjectionStats { cases, ..Default::default() };
    for n in 0..cases {
        let c = random_projection_case(&mut r, kind);
        let oracle = grid_oracle(&c, 1e-3);
        let got = stlctl::safety::solve_safe_control(&c.model, &c.q, &c.u_ref, &c.bs);
        st.active += usize::from(min_margin(&c, &c.u_ref) < 0.0);
        match (got, oracle) {
            (Ok(u), Some((g, gc))) => {
                let dist = u.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let margin = min_margin(&c, &u);
                let cost = deviation(&c, &u);
                if dist.is_finite() && cost > gc {
                    st.max_distance = st.max_distance.max(dist);
                }
                if margin < 0.0 || !c.model.bounds().contains(&u) || (dist > tol && cost > gc) {
                    st.failures.push(format!(
                        "case {n}: got {u:?} (cost {cost:.3e}, margin {margin:.2e}), grid {g:?} (cost {gc:.3e})"
                    ));
                }
            }
            (Err(e), Some((g, _))) => st.failures.push(format!("case {n}: {e} but grid found {g:?}")),
            (Ok(u), None) => {
                if min_margin(&c, &u) < 0.0 {
                    st.failures.push(format!("case {n}: {u:?} violates a margin"));
                }
            }
            (Err(_), None) => {}
        }
    }
    st
}
