//! Signal temporal logic over discrete-time traces.
//!
//! Formulas are built from predicate atoms `l(s_k) >= 0`, boolean connectives and the bounded
//! temporal operators `F[a,b]` (eventually) and `G[a,b]` (always). Three semantics are provided:
//!
//! * boolean satisfaction ([`eval_boolean`]),
//! * traditional min/max robustness ([`eval_robustness_traditional`]),
//! * arithmetic-geometric mean (AGM) robustness ([`eval_robustness_agm`]), valued in `[-1, 1]`.
//!
//! All evaluation functions are pure and take absolute time indices; a [`Trace`] may start at a
//! non-zero absolute time so that windows of a longer signal can be evaluated in place.

pub(crate) mod eval;
mod parse;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Scalar;

pub use eval::{
    eval_boolean, eval_robustness_agm, eval_robustness_traditional, eval_robustness_with_history,
    AgmEvaluator,
};
pub use parse::{parse_formula, ParseError, PredicateTable};

/// Errors raised while evaluating formulas.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StlError {
    #[error("trace too short: evaluating at time {time} needs samples through time {required}, trace covers {start}..={available}")]
    TraceTooShort {
        time: usize,
        required: usize,
        start: usize,
        available: i64,
    },
    #[error("evaluation time {time} precedes the first trace sample at time {start}")]
    BeforeStart { time: usize, start: usize },
    #[error("predicate `{name}` reads {needed} state components but the trace has dimension {got}")]
    Dimension {
        name: String,
        needed: usize,
        got: usize,
    },
    #[error("history must start at time 0, found start {0}")]
    HistoryStart(usize),
    #[error("history ends before time {history_end} but tail starts at time {tail_start}")]
    IndexMismatch { history_end: usize, tail_start: usize },
    #[error("history has dimension {history} but tail has dimension {tail}")]
    DimensionMismatch { history: usize, tail: usize },
    #[error("invalid predicate `{name}`: {reason}")]
    InvalidPredicate { name: String, reason: String },
}

/// Bounded discrete time interval `[a, b]`, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interval {
    a: usize,
    b: usize,
}

impl Interval {
    /// Returns `None` when `a > b`.
    pub fn new(a: usize, b: usize) -> Option<Self> {
        (a <= b).then_some(Self { a, b })
    }

    pub fn start(&self) -> usize {
        self.a
    }

    pub fn end(&self) -> usize {
        self.b
    }
}

/// Closed catalog of predicate functions `l`.
#[derive(Debug, Clone, PartialEq)]
pub enum PredicateFn<T> {
    /// `coeffs . q + offset`; `coeffs` may be shorter than the state.
    Halfplane { coeffs: Vec<T>, offset: T },
    /// `radius^2 - |q[..center.len()] - center|^2`.
    Disk { center: Vec<T>, radius: T },
}

impl<T: Scalar> PredicateFn<T> {
    /// Number of leading state components read by the function.
    pub fn arity(&self) -> usize {
        match self {
            PredicateFn::Halfplane { coeffs, .. } => coeffs.len(),
            PredicateFn::Disk { center, .. } => center.len(),
        }
    }

    #[inline]
    pub fn eval(&self, q: &[T]) -> T {
        match self {
            PredicateFn::Halfplane { coeffs, offset } => coeffs
                .iter()
                .zip(q)
                .fold(*offset, |acc, (&c, &x)| acc + c * x),
            PredicateFn::Disk { center, radius } => {
                let d2 = center
                    .iter()
                    .zip(q)
                    .fold(T::zero(), |acc, (&c, &x)| acc + (x - c) * (x - c));
                *radius * *radius - d2
            }
        }
    }
}

/// Named predicate `l(s) >= 0` with a positive normalization scale for AGM robustness.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate<T> {
    name: String,
    func: PredicateFn<T>,
    scale: T,
}

impl<T: Scalar> Predicate<T> {
    /// Returns `None` unless `scale` is finite and positive.
    pub fn new(name: impl Into<String>, func: PredicateFn<T>, scale: T) -> Option<Self> {
        (scale.is_finite() && scale > T::zero()).then(|| Self {
            name: name.into(),
            func,
            scale,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn func(&self) -> &PredicateFn<T> {
        &self.func
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Raw value `l(q)`.
    #[inline]
    pub fn value(&self, q: &[T]) -> T {
        self.func.eval(q)
    }

    /// `l(q) / scale` clamped to `[-1, 1]`.
    #[inline]
    pub fn normalized(&self, q: &[T]) -> T {
        (self.value(q) / self.scale).max(-T::one()).min(T::one())
    }
}

/// STL formula tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula<T> {
    True,
    Atom(Arc<Predicate<T>>),
    Not(Box<Formula<T>>),
    And(Vec<Formula<T>>),
    Or(Vec<Formula<T>>),
    Eventually(Interval, Box<Formula<T>>),
    Always(Interval, Box<Formula<T>>),
}

impl<T: Scalar> Formula<T> {
    pub fn atom(p: Predicate<T>) -> Self {
        Formula::Atom(Arc::new(p))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Self) -> Self {
        Formula::Not(Box::new(f))
    }

    /// Conjunction; a single child is returned unchanged.
    ///
    /// # Panics
    /// If `children` is empty.
    pub fn and(mut children: Vec<Self>) -> Self {
        assert!(!children.is_empty(), "empty conjunction");
        if children.len() == 1 {
            children.pop().unwrap()
        } else {
            Formula::And(children)
        }
    }

    /// Disjunction; a single child is returned unchanged.
    ///
    /// # Panics
    /// If `children` is empty.
    pub fn or(mut children: Vec<Self>) -> Self {
        assert!(!children.is_empty(), "empty disjunction");
        if children.len() == 1 {
            children.pop().unwrap()
        } else {
            Formula::Or(children)
        }
    }

    pub fn eventually(interval: Interval, f: Self) -> Self {
        Formula::Eventually(interval, Box::new(f))
    }

    pub fn always(interval: Interval, f: Self) -> Self {
        Formula::Always(interval, Box::new(f))
    }

    /// Number of future steps a trace must cover to decide the formula at the current time.
    pub fn horizon(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Not(f) => f.horizon(),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().map(Self::horizon).max().unwrap_or(0),
            Formula::Eventually(i, f) | Formula::Always(i, f) => i.end() + f.horizon(),
        }
    }

    /// Largest state dimension read by any predicate, with the offending predicate name.
    fn required_dim(&self) -> Option<(usize, &str)> {
        match self {
            Formula::True => None,
            Formula::Atom(p) => Some((p.func().arity(), p.name())),
            Formula::Not(f) | Formula::Eventually(_, f) | Formula::Always(_, f) => {
                f.required_dim()
            }
            Formula::And(cs) | Formula::Or(cs) => cs
                .iter()
                .filter_map(Self::required_dim)
                .max_by_key(|(d, _)| *d),
        }
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<(), StlError> {
        match self.required_dim() {
            Some((needed, name)) if needed > dim => Err(StlError::Dimension {
                name: name.to_string(),
                needed,
                got: dim,
            }),
            _ => Ok(()),
        }
    }
}

/// `hrz(f)`.
pub fn horizon<T: Scalar>(f: &Formula<T>) -> usize {
    f.horizon()
}

fn needs_parens<T>(f: &Formula<T>) -> bool {
    matches!(f, Formula::And(_) | Formula::Or(_))
}

fn write_child<T: Scalar>(
    out: &mut fmt::Formatter<'_>,
    f: &Formula<T>,
    always_wrap: bool,
) -> fmt::Result {
    if always_wrap || needs_parens(f) {
        write!(out, "({f})")
    } else {
        write!(out, "{f}")
    }
}

/// Prints the concrete syntax accepted by [`parse_formula`].
impl<T: Scalar> fmt::Display for Formula<T> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(out, "T"),
            Formula::Atom(p) => write!(out, "{}", p.name()),
            Formula::Not(f) => {
                write!(out, "!")?;
                write_child(out, f, false)
            }
            Formula::And(cs) | Formula::Or(cs) => {
                let sep = if matches!(self, Formula::And(_)) { " & " } else { " | " };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(out, "{sep}")?;
                    }
                    write_child(out, c, false)?;
                }
                Ok(())
            }
            Formula::Eventually(i, f) | Formula::Always(i, f) => {
                let op = if matches!(self, Formula::Eventually(..)) { 'F' } else { 'G' };
                write!(out, "{op}[{},{}]", i.start(), i.end())?;
                write_child(out, f, true)
            }
        }
    }
}

/// Finite sequence of equal-dimension state vectors starting at an absolute time index.
///
/// Samples are stored row-major in one buffer. An empty trace is only produced by
/// [`Trace::empty`] and is used as the history at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    data: Vec<T>,
    dim: usize,
    start: usize,
}

impl<T: Scalar> Trace<T> {
    pub fn empty(dim: usize) -> Self {
        Self {
            data: Vec::new(),
            dim,
            start: 0,
        }
    }

    /// Builds a trace from rows; returns `None` if rows are empty or have mixed dimensions.
    pub fn from_states<S: AsRef<[T]>>(states: &[S], start: usize) -> Option<Self> {
        let dim = states.first()?.as_ref().len();
        let mut data = Vec::with_capacity(dim * states.len());
        for s in states {
            let s = s.as_ref();
            if s.len() != dim {
                return None;
            }
            data.extend_from_slice(s);
        }
        Some(Self { data, dim, start })
    }

    /// Scalar trace (dimension 1).
    pub fn from_scalars(values: &[T]) -> Self {
        Self {
            data: values.to_vec(),
            dim: 1,
            start: 0,
        }
    }

    pub fn with_start(mut self, start: usize) -> Self {
        self.start = start;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Absolute time one past the last sample.
    pub fn end(&self) -> usize {
        self.start + self.len()
    }

    /// Sample by position (not absolute time).
    #[inline]
    pub fn state(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Sample at absolute time `t`.
    #[inline]
    pub fn at(&self, t: usize) -> &[T] {
        self.state(t - self.start)
    }

    pub fn last(&self) -> Option<&[T]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.states().map(<[T]>::to_vec).collect()
    }

    /// # Panics
    /// If `q` does not match the trace dimension.
    pub fn push(&mut self, q: &[T]) {
        assert_eq!(q.len(), self.dim, "state dimension mismatch");
        self.data.extend_from_slice(q);
    }

    /// Keeps the first `len` samples.
    pub fn truncate(&mut self, len: usize) {
        self.data.truncate(len * self.dim);
    }

    /// Mutable access to a sample by position.
    pub fn state_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Concatenation `self ∥ tail`; `tail` must start where `self` ends.
    pub fn concat(&self, tail: &Trace<T>) -> Result<Trace<T>, StlError> {
        if self.is_empty() {
            return Ok(tail.clone());
        }
        if tail.is_empty() {
            return Ok(self.clone());
        }
        if tail.dim != self.dim {
            return Err(StlError::DimensionMismatch {
                history: self.dim,
                tail: tail.dim,
            });
        }
        if tail.start != self.end() {
            return Err(StlError::IndexMismatch {
                history_end: self.end(),
                tail_start: tail.start,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&tail.data);
        Ok(Trace {
            data,
            dim: self.dim,
            start: self.start,
        })
    }

    /// Copy of the samples at absolute times `from..to`.
    pub fn window(&self, from: usize, to: usize) -> Trace<T> {
        let (a, b) = (from - self.start, to - self.start);
        Trace {
            data: self.data[a * self.dim..b * self.dim].to_vec(),
            dim: self.dim,
            start: from,
        }
    }
}

/// Which quantitative semantics produced a [`RobustnessValue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    Traditional,
    Agm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessValue<T> {
    pub value: T,
    pub semantics: Semantics,
}
