use super::{Formula, RobustnessValue, Semantics, StlError, Trace};
use crate::scalar::Scalar;

fn check_coverage<T: Scalar>(f: &Formula<T>, tr: &Trace<T>, k: usize) -> Result<(), StlError> {
    if k < tr.start() {
        return Err(StlError::BeforeStart {
            time: k,
            start: tr.start(),
        });
    }
    let required = k + f.horizon();
    if tr.is_empty() || required >= tr.end() {
        return Err(StlError::TraceTooShort {
            time: k,
            required,
            start: tr.start(),
            available: tr.end() as i64 - 1,
        });
    }
    f.check_dim(tr.dim())
}

/// Boolean satisfaction of `f` by `tr` at absolute time `k`.
pub fn eval_boolean<T: Scalar>(f: &Formula<T>, tr: &Trace<T>, k: usize) -> Result<bool, StlError> {
    check_coverage(f, tr, k)?;
    Ok(boolean(f, tr, k))
}

fn boolean<T: Scalar>(f: &Formula<T>, tr: &Trace<T>, k: usize) -> bool {
    match f {
        Formula::True => true,
        Formula::Atom(p) => p.value(tr.at(k)) >= T::zero(),
        Formula::Not(g) => !boolean(g, tr, k),
        Formula::And(cs) => cs.iter().all(|c| boolean(c, tr, k)),
        Formula::Or(cs) => cs.iter().any(|c| boolean(c, tr, k)),
        Formula::Always(i, g) => (k + i.start()..=k + i.end()).all(|t| boolean(g, tr, t)),
        Formula::Eventually(i, g) => (k + i.start()..=k + i.end()).any(|t| boolean(g, tr, t)),
    }
}

/// Classic min/max robustness on raw (unnormalized) predicate values.
pub fn eval_robustness_traditional<T: Scalar>(
    f: &Formula<T>,
    tr: &Trace<T>,
    k: usize,
) -> Result<RobustnessValue<T>, StlError> {
    check_coverage(f, tr, k)?;
    Ok(RobustnessValue {
        value: traditional(f, tr, k),
        semantics: Semantics::Traditional,
    })
}

// Strict comparisons keep the first extremum on ties.
fn min_first<T: Scalar>(vals: impl Iterator<Item = T>) -> T {
    vals.fold(T::infinity(), |m, v| if v < m { v } else { m })
}

fn max_first<T: Scalar>(vals: impl Iterator<Item = T>) -> T {
    vals.fold(T::neg_infinity(), |m, v| if v > m { v } else { m })
}

fn traditional<T: Scalar>(f: &Formula<T>, tr: &Trace<T>, k: usize) -> T {
    match f {
        Formula::True => T::infinity(),
        Formula::Atom(p) => p.value(tr.at(k)),
        Formula::Not(g) => -traditional(g, tr, k),
        Formula::And(cs) => min_first(cs.iter().map(|c| traditional(c, tr, k))),
        Formula::Or(cs) => max_first(cs.iter().map(|c| traditional(c, tr, k))),
        Formula::Always(i, g) => {
            min_first((k + i.start()..=k + i.end()).map(|t| traditional(g, tr, t)))
        }
        Formula::Eventually(i, g) => {
            max_first((k + i.start()..=k + i.end()).map(|t| traditional(g, tr, t)))
        }
    }
}

/// AGM robustness in `[-1, 1]`.
pub fn eval_robustness_agm<T: Scalar>(
    f: &Formula<T>,
    tr: &Trace<T>,
    k: usize,
) -> Result<RobustnessValue<T>, StlError> {
    check_coverage(f, tr, k)?;
    Ok(RobustnessValue {
        value: agm(f, tr, k),
        semantics: Semantics::Agm,
    })
}

/// AGM robustness of `history ∥ tail` at time 0.
pub fn eval_robustness_with_history<T: Scalar>(
    f: &Formula<T>,
    history: &Trace<T>,
    tail: &Trace<T>,
) -> Result<RobustnessValue<T>, StlError> {
    if !history.is_empty() && history.start() != 0 {
        return Err(StlError::HistoryStart(history.start()));
    }
    let end = if history.is_empty() { 0 } else { history.end() };
    if tail.start() != end {
        return Err(StlError::IndexMismatch {
            history_end: end,
            tail_start: tail.start(),
        });
    }
    let joined = history.concat(tail)?;
    eval_robustness_agm(f, &joined, 0)
}

/// Conjunction rule: geometric mean branch when every child is positive, otherwise the
/// arithmetic mean of the non-positive children over all `m` children.
#[inline]
pub(crate) fn agm_and<T: Scalar>(vals: impl Iterator<Item = T>) -> T {
    let mut m = 0usize;
    let mut prod = T::one();
    let mut neg_sum = T::zero();
    let mut all_pos = true;
    for v in vals {
        m += 1;
        if v > T::zero() {
            prod *= T::one() + v;
        } else {
            all_pos = false;
            neg_sum += v;
        }
    }
    let m = T::from_usize(m).unwrap();
    if all_pos {
        prod.powf(m.recip()) - T::one()
    } else {
        neg_sum / m
    }
}

#[inline]
pub(crate) fn agm_or<T: Scalar>(vals: impl Iterator<Item = T>) -> T {
    let mut m = 0usize;
    let mut prod = T::one();
    let mut pos_sum = T::zero();
    let mut all_nonpos = true;
    for v in vals {
        m += 1;
        if v > T::zero() {
            all_nonpos = false;
            pos_sum += v;
        } else {
            prod *= T::one() - v;
        }
    }
    let m = T::from_usize(m).unwrap();
    if all_nonpos {
        T::one() - prod.powf(m.recip())
    } else {
        pos_sum / m
    }
}

/// Unchecked AGM recursion; callers must have validated coverage and dimensions.
pub(crate) fn agm<T: Scalar>(f: &Formula<T>, tr: &Trace<T>, k: usize) -> T {
    match f {
        Formula::True => T::one(),
        Formula::Atom(p) => p.normalized(tr.at(k)),
        Formula::Not(g) => -agm(g, tr, k),
        Formula::And(cs) => agm_and(cs.iter().map(|c| agm(c, tr, k))),
        Formula::Or(cs) => agm_or(cs.iter().map(|c| agm(c, tr, k))),
        Formula::Always(i, g) => agm_and((k + i.start()..=k + i.end()).map(|t| agm(g, tr, t))),
        Formula::Eventually(i, g) => agm_or((k + i.start()..=k + i.end()).map(|t| agm(g, tr, t))),
    }
}

/// Repeated AGM evaluation of one formula against a trace buffer whose coverage was checked once.
///
/// Used by optimizers that rewrite the tail of a trace thousands of times per solve.
#[derive(Debug, Clone)]
pub struct AgmEvaluator<'f, T> {
    formula: &'f Formula<T>,
    time: usize,
}

impl<'f, T: Scalar> AgmEvaluator<'f, T> {
    /// Validates that traces shaped like `shape` (same start, length, dimension) can be evaluated.
    pub fn new(formula: &'f Formula<T>, shape: &Trace<T>, time: usize) -> Result<Self, StlError> {
        check_coverage(formula, shape, time)?;
        Ok(Self { formula, time })
    }

    /// # Panics
    /// If `tr` is shorter than the trace passed to [`AgmEvaluator::new`].
    #[inline]
    pub fn eval(&self, tr: &Trace<T>) -> T {
        agm(self.formula, tr, self.time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{Interval, Predicate, PredicateFn};

    fn ge0() -> Formula<f64> {
        Formula::atom(
            Predicate::new(
                "s",
                PredicateFn::Halfplane {
                    coeffs: vec![1.0],
                    offset: 0.0,
                },
                1.0,
            )
            .unwrap(),
        )
    }

    fn iv(a: usize, b: usize) -> Interval {
        Interval::new(a, b).unwrap()
    }

    #[test]
    fn boolean_examples() {
        let f = Formula::eventually(iv(0, 2), ge0());
        assert!(eval_boolean(&f, &Trace::from_scalars(&[-1.0, -1.0, 1.0]), 0).unwrap());
        let g = Formula::always(iv(0, 2), ge0());
        assert!(!eval_boolean(&g, &Trace::from_scalars(&[1.0, -1.0, 1.0]), 0).unwrap());
    }

    #[test]
    fn traditional_examples() {
        let v = eval_robustness_traditional(&ge0(), &Trace::from_scalars(&[0.7]), 0).unwrap();
        assert_eq!(v.value, 0.7);
        assert_eq!(v.semantics, Semantics::Traditional);
        let g = Formula::always(iv(0, 2), ge0());
        let v = eval_robustness_traditional(&g, &Trace::from_scalars(&[0.5, 0.2, 0.9]), 0).unwrap();
        assert_eq!(v.value, 0.2);
        // F[0,1](s>=0) & (s>=0) on [-0.1, 0.4]: min(max(-0.1, 0.4), -0.1)
        let f = Formula::and(vec![Formula::eventually(iv(0, 1), ge0()), ge0()]);
        let v = eval_robustness_traditional(&f, &Trace::from_scalars(&[-0.1, 0.4]), 0).unwrap();
        assert_eq!(v.value, -0.1);
    }

    #[test]
    fn agm_conjunction_branches() {
        let v = agm_and([0.2f64, 0.8].into_iter());
        assert!((v - 0.469_693_845_669_906_9).abs() < 1e-15);
        let v = agm_and([0.5f64, -0.4, -0.2].into_iter());
        assert!((v + 0.2).abs() < 1e-15);
    }

    #[test]
    fn agm_disjunction_branches() {
        // dual of the conjunction: 1 - sqrt(1.2 * 1.8)
        let v = agm_or([-0.2f64, -0.8].into_iter());
        assert!((v + 0.469_693_845_669_906_9).abs() < 1e-15);
        let v = agm_or([-0.5f64, 0.4, 0.2].into_iter());
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn agm_negation_duality() {
        let tr = Trace::from_scalars(&[0.3]);
        let f = ge0();
        let pos = eval_robustness_agm(&f, &tr, 0).unwrap().value;
        let neg = eval_robustness_agm(&Formula::not(f), &tr, 0).unwrap().value;
        assert_eq!(pos, 0.3);
        assert_eq!(neg, -0.3);
    }

    #[test]
    fn agm_clamps_predicates() {
        let tr = Trace::from_scalars(&[5.0, -7.0]);
        assert_eq!(eval_robustness_agm(&ge0(), &tr, 0).unwrap().value, 1.0);
        assert_eq!(eval_robustness_agm(&ge0(), &tr, 1).unwrap().value, -1.0);
    }

    #[test]
    fn agm_true_is_one() {
        let tr = Trace::from_scalars(&[0.0]);
        assert_eq!(eval_robustness_agm(&Formula::True, &tr, 0).unwrap().value, 1.0);
    }

    #[test]
    fn degenerate_interval_is_one_sample() {
        let tr = Trace::from_scalars(&[-0.5, 0.25, -0.5]);
        let f = Formula::eventually(iv(1, 1), ge0());
        let g = Formula::always(iv(1, 1), ge0());
        let vf = eval_robustness_agm(&f, &tr, 0).unwrap().value;
        let vg = eval_robustness_agm(&g, &tr, 0).unwrap().value;
        assert_eq!(vf, 0.25);
        assert!((vg - 0.25).abs() < 1e-15);
    }

    #[test]
    fn short_trace_reports_lengths() {
        let f = Formula::always(iv(0, 5), ge0());
        let err = eval_boolean(&f, &Trace::from_scalars(&[1.0, 1.0]), 0).unwrap_err();
        assert_eq!(
            err,
            StlError::TraceTooShort {
                time: 0,
                required: 5,
                start: 0,
                available: 1
            }
        );
    }

    #[test]
    fn dimension_checked() {
        let p = Predicate::new(
            "xy",
            PredicateFn::Disk {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            1.0,
        )
        .unwrap();
        let err = eval_boolean(&Formula::atom(p), &Trace::from_scalars(&[0.0]), 0).unwrap_err();
        assert!(matches!(err, StlError::Dimension { needed: 2, got: 1, .. }));
    }

    #[test]
    fn evaluation_before_start_rejected() {
        let tr = Trace::from_scalars(&[1.0]).with_start(3);
        assert_eq!(
            eval_boolean(&ge0(), &tr, 1).unwrap_err(),
            StlError::BeforeStart { time: 1, start: 3 }
        );
        assert!(eval_boolean(&ge0(), &tr, 3).unwrap());
    }

    #[test]
    fn history_concatenation() {
        let f = Formula::always(iv(0, 3), ge0());
        let tail = Trace::from_scalars(&[0.1, 0.2, 0.3, 0.4]);
        let empty = Trace::empty(1);
        assert_eq!(
            eval_robustness_with_history(&f, &empty, &tail).unwrap(),
            eval_robustness_agm(&f, &tail, 0).unwrap()
        );
        let hist = Trace::from_scalars(&[0.1, 0.2]);
        let tail = Trace::from_scalars(&[0.3, 0.4]).with_start(2);
        assert_eq!(
            eval_robustness_with_history(&f, &hist, &tail).unwrap().value,
            eval_robustness_agm(&f, &Trace::from_scalars(&[0.1, 0.2, 0.3, 0.4]), 0)
                .unwrap()
                .value
        );
        let misplaced = Trace::from_scalars(&[0.3, 0.4]).with_start(3);
        assert!(matches!(
            eval_robustness_with_history(&f, &hist, &misplaced),
            Err(StlError::IndexMismatch { .. })
        ));
    }

    #[test]
    fn generic_over_f32() {
        let p = Predicate::new(
            "s",
            PredicateFn::Halfplane {
                coeffs: vec![1.0f32],
                offset: 0.0,
            },
            1.0,
        )
        .unwrap();
        let f = Formula::always(iv(0, 1), Formula::atom(p));
        let v = eval_robustness_agm(&f, &Trace::from_scalars(&[0.2f32, 0.8]), 0).unwrap();
        assert!((v.value - 0.469_693_85).abs() < 1e-6);
    }
}
