//! Semantics, horizon and parser properties of the STL layer.

mod common;

use common::*;
use proptest::prelude::*;
use stlctl::pipeline::Scenario;
use stlctl::stl::{
    eval_boolean, eval_robustness_agm, eval_robustness_traditional, eval_robustness_with_history,
    horizon, parse_formula, Formula, Predicate, PredicateFn, PredicateTable, Trace,
};

fn scalar_trace(v: &[f64]) -> Trace<f64> {
    Trace::from_scalars(v)
}

/// Atom whose normalized value on a one-dimensional trace is the sample itself.
fn s_atom(name: &str) -> Formula<f64> {
    Formula::atom(Predicate::new(name, PredicateFn::Halfplane { coeffs: vec![1.0], offset: 0.0 }, 1.0).unwrap())
}

/// Atom reading component `i` of the state, so children of a connective can take independent values.
fn component(i: usize) -> Formula<f64> {
    let mut c = vec![0.0; i + 1];
    c[i] = 1.0;
    Formula::atom(Predicate::new(format!("c{i}"), PredicateFn::Halfplane { coeffs: c, offset: 0.0 }, 1.0).unwrap())
}

#[test]
fn boolean_examples() {
    let s = s_nonneg();
    assert!(eval_boolean(&Formula::eventually(iv(0, 2), s.clone()), &scalar_trace(&[-1.0, -1.0, 1.0]), 0).unwrap());
    assert!(!eval_boolean(&Formula::always(iv(0, 2), s), &scalar_trace(&[1.0, -1.0, 1.0]), 0).unwrap());
}

#[test]
fn traditional_examples() {
    let s = s_nonneg();
    let v = |f: &Formula<f64>, t: &[f64]| eval_robustness_traditional(f, &scalar_trace(t), 0).unwrap().value;
    assert_eq!(v(&s, &[0.7]), 0.7);
    assert_eq!(v(&Formula::always(iv(0, 2), s.clone()), &[0.5, 0.2, 0.9]), 0.2);
    let f = Formula::and(vec![Formula::eventually(iv(0, 1), s.clone()), s]);
    assert_eq!(v(&f, &[-0.1, 0.4]), -0.1);
}

#[test]
fn agm_connective_examples() {
    let q = Trace::from_states(&[vec![0.2, 0.8]], 0).unwrap();
    let f = Formula::and(vec![component(0), component(1)]);
    let v = eval_robustness_agm(&f, &q, 0).unwrap().value;
    assert!((v - ((1.2f64 * 1.8).sqrt() - 1.0)).abs() < 1e-12);
    assert!((v - 0.469694).abs() < 1e-6);

    let q = Trace::from_states(&[vec![0.5, -0.4, -0.2]], 0).unwrap();
    let f = Formula::and(vec![component(0), component(1), component(2)]);
    assert!((eval_robustness_agm(&f, &q, 0).unwrap().value + 0.2).abs() < 1e-12);

    let t = scalar_trace(&[0.3]);
    assert_eq!(eval_robustness_agm(&Formula::not(s_atom("s")), &t, 0).unwrap().value, -0.3);
}

#[test]
fn agm_clamps_predicates() {
    let t = scalar_trace(&[7.0]);
    assert_eq!(eval_robustness_agm(&s_atom("s"), &t, 0).unwrap().value, 1.0);
    assert_eq!(eval_robustness_traditional(&s_atom("s"), &t, 0).unwrap().value, 7.0);
}

#[test]
fn short_trace_reported() {
    let f = Formula::eventually(iv(0, 3), s_nonneg());
    assert!(eval_boolean(&f, &scalar_trace(&[1.0, 1.0]), 0).is_err());
    assert!(eval_robustness_agm(&f, &scalar_trace(&[1.0, 1.0, 1.0, 1.0]), 1).is_err());
}

#[test]
fn soundness_on_random_corpus() {
    let (bad, sat, unsat) = soundness_counterexamples(1000, 11);
    assert!(bad.is_empty(), "{bad:#?}");
    assert!(sat > 200 && unsat > 200, "{sat} satisfied, {unsat} violated");
}

#[test]
fn horizons_of_case_study_formulas() {
    let c1 = Scenario::builtin("case1").unwrap();
    let c2 = Scenario::builtin("case2").unwrap();
    assert_eq!(horizon(&c1.formula), 20);
    assert_eq!(horizon(&c2.formula), 10);
    assert_eq!(horizon(&s_nonneg()), 0);
    assert_eq!(dependency_horizon(&c2.formula, 2, -1.5, 1.5, 14, 3), 10);
    assert_eq!(dependency_horizon(&c1.formula, 3, 0.0, 10.0, 24, 4), 20);
}

#[test]
fn horizon_consistency_on_random_corpus() {
    let bad = horizon_consistency_failures(500, 12);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn history_concatenation() {
    let c1 = Scenario::builtin("case1").unwrap();
    let mut r = rng(5);
    let full = random_trace(&mut r, 21, 3);
    let rows = full.to_rows();
    let empty = Trace::empty(3);
    let direct = eval_robustness_agm(&c1.formula, &full, 0).unwrap();
    assert_eq!(eval_robustness_with_history(&c1.formula, &empty, &full).unwrap(), direct);
    let history = Trace::from_states(&rows[..9], 0).unwrap();
    let tail = Trace::from_states(&rows[9..], 9).unwrap();
    assert_eq!(eval_robustness_with_history(&c1.formula, &history, &tail).unwrap(), direct);
    let misplaced = Trace::from_states(&rows[9..], 8).unwrap();
    assert!(eval_robustness_with_history(&c1.formula, &history, &misplaced).is_err());
}

#[test]
fn history_with_satisfying_tail_is_positive() {
    // Nine samples through Init towards RegB, then a tail through RegB into RegC.
    let c1 = Scenario::builtin("case1").unwrap();
    let path: Vec<(f64, f64)> = vec![
        (0.5, 0.5), (1.0, 1.0), (1.5, 1.6), (2.0, 2.2), (2.5, 2.9), (3.0, 3.6), (3.5, 4.3), (4.0, 5.0),
        (4.0, 5.0), (4.0, 5.0), (4.6, 5.5), (5.4, 6.1), (6.2, 6.7), (7.0, 7.3), (7.6, 7.8), (8.0, 8.0),
        (8.0, 8.0), (8.0, 8.0), (8.0, 8.0), (8.0, 8.0), (8.0, 8.0),
    ];
    let rows: Vec<Vec<f64>> = path.iter().map(|&(x, y)| vec![x, y, 0.0]).collect();
    let history = Trace::from_states(&rows[..9], 0).unwrap();
    let tail = Trace::from_states(&rows[9..], 9).unwrap();
    let v = eval_robustness_with_history(&c1.formula, &history, &tail).unwrap().value;
    assert!(v > 0.0, "{v}");
    assert!(eval_boolean(&c1.formula, &history.concat(&tail).unwrap(), 0).unwrap());
}

#[test]
fn parser_round_trip_on_case_studies() {
    for name in ["case1", "case2"] {
        let sc = Scenario::builtin(name).unwrap();
        let printed = sc.formula.to_string();
        let again = parse_formula(&printed, &sc.table).unwrap();
        assert_eq!(again, sc.formula, "{printed}");
    }
}

#[test]
fn parser_rejects_bad_input() {
    let mut t = PredicateTable::new();
    t.insert_box("A", &[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
    assert!(parse_formula::<f64>("F[3,1]A", &t).is_err());
    assert!(parse_formula::<f64>("A & B", &t).is_err());
    assert!(parse_formula::<f64>("G[0,2](A", &t).is_err());
    assert!(parse_formula::<f64>("A | !A & T", &t).is_ok());
}

fn arb_formula() -> impl Strategy<Value = (Formula<f64>, Trace<f64>, usize)> {
    any::<u64>().prop_map(|seed| {
        let mut r = rng(seed);
        let f = random_formula(&mut r, 3, 10, 2);
        let k = seed as usize % 3;
        let tr = random_trace(&mut r, k + f.horizon() + 1, 2);
        (f, tr, k)
    })
}

proptest! {
    #[test]
    fn negation_duality((f, tr, k) in arb_formula()) {
        let n = Formula::not(f.clone());
        prop_assert_eq!(eval_robustness_agm(&n, &tr, k).unwrap().value, -eval_robustness_agm(&f, &tr, k).unwrap().value);
        prop_assert_eq!(
            eval_robustness_traditional(&n, &tr, k).unwrap().value,
            -eval_robustness_traditional(&f, &tr, k).unwrap().value
        );
    }

    #[test]
    fn agm_range((f, tr, k) in arb_formula()) {
        let v = eval_robustness_agm(&f, &tr, k).unwrap().value;
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn de_morgan_boolean((f, tr, k) in arb_formula(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_formula(&mut r, 2, 10 - f.horizon().min(10), 2);
        let tr = {
            let extra = random_trace(&mut r, g.horizon() + k + 1, 2).to_rows();
            let mut rows = tr.to_rows();
            rows.extend(extra.into_iter().skip(rows.len()));
            Trace::from_states(&rows, 0).unwrap()
        };
        let lhs = Formula::not(Formula::and(vec![f.clone(), g.clone()]));
        let rhs = Formula::or(vec![Formula::not(f), Formula::not(g)]);
        prop_assert_eq!(eval_boolean(&lhs, &tr, k).unwrap(), eval_boolean(&rhs, &tr, k).unwrap());
    }

    #[test]
    fn agm_idempotence(r in 0.001f64..1.0, m in 1usize..6) {
        let q = Trace::from_states(&[vec![r; m]], 0).unwrap();
        let pos = Formula::and((0..m).map(component).collect());
        prop_assert!((eval_robustness_agm(&pos, &q, 0).unwrap().value - r).abs() < 1e-12);
        let q = Trace::from_states(&[vec![-r; m]], 0).unwrap();
        let neg = Formula::or((0..m).map(component).collect());
        prop_assert!((eval_robustness_agm(&neg, &q, 0).unwrap().value + r).abs() < 1e-12);
    }
}
