//! Stacked LSTM feedback controller with a tanh read-out scaled to the control box.
//!
//! All weights live in one flat buffer. Per layer `l` (input width `in_l`): `w_ih` (`4H x in_l`),
//! `w_hh` (`4H x H`), `b` (`4H`), gate rows ordered input, forget, cell, output. The read-out
//! follows: `w_out` (`m x H`) and `b_out` (`m`). Matrices are row-major.

mod io;
mod train;

use rand::Rng;
use thiserror::Error;

use crate::optim::seeded_rng;
use crate::scalar::Scalar;
use crate::stl::Trace;
use crate::systems::ControlBounds;

pub use io::{load_params, params_from_json, params_to_json, save_params};
pub use train::{
    gradient_check, gradient_check_against, loss_gradient, mean_step_error, record_loss, train,
    DatasetRecord,
    TrainConfig, TrainOutcome,
};

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-component affine input map `(q - mean) / range`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMap<T> {
    pub mean: Vec<T>,
    pub range: Vec<T>,
}

impl<T: Scalar> InputMap<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            range: vec![T::one(); dim],
        }
    }

    /// Zero mean and unit range over all given states; constant components keep range 1.
    pub fn fit<'a>(states: impl IntoIterator<Item = &'a [T]>, dim: usize) -> Self {
        let mut sum = vec![T::zero(); dim];
        let mut lo = vec![T::infinity(); dim];
        let mut hi = vec![T::neg_infinity(); dim];
        let mut count = 0usize;
        for q in states {
            for (i, &v) in q.iter().enumerate().take(dim) {
                sum[i] += v;
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(dim);
        }
        let n = T::of(count as f64);
        let mean = sum.into_iter().map(|s| s / n).collect();
        let range = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| {
                let r = *h - *l;
                if r > T::zero() {
                    r
                } else {
                    T::one()
                }
            })
            .collect();
        Self { mean, range }
    }

    pub fn apply(&self, q: &[T], out: &mut [T]) {
        for (o, ((v, m), r)) in out.iter_mut().zip(q.iter().zip(&self.mean).zip(&self.range)) {
            *o = (*v - *m) / *r;
        }
    }
}

/// Offsets of the parameter blocks inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b: usize,
    pub input: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    layers: usize,
    hidden: usize,
    input_dim: usize,
    output_dim: usize,
    weights: Vec<T>,
    input_map: InputMap<T>,
    bounds: ControlBounds<T>,
}

impl<T: Scalar> LstmParams<T> {
    /// All-zero parameters; the network outputs the box midpoint.
    pub fn zeros(
        layers: usize,
        hidden: usize,
        input_dim: usize,
        bounds: ControlBounds<T>,
    ) -> Result<Self, LearnError> {
        if layers == 0 || hidden == 0 || input_dim == 0 {
            return Err(LearnError::Shape(
                "layers, hidden size and input dimension must be positive".into(),
            ));
        }
        let output_dim = bounds.dim();
        let n = Self::count(layers, hidden, input_dim, output_dim);
        Ok(Self {
            layers,
            hidden,
            input_dim,
            output_dim,
            weights: vec![T::zero(); n],
            input_map: InputMap::identity(input_dim),
            bounds,
        })
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`, where `fan_in` is the row width of each block
    /// (`in_l + H` for gate rows, `H` for the read-out).
    pub fn init(
        layers: usize,
        hidden: usize,
        input_dim: usize,
        bounds: ControlBounds<T>,
        seed: u64,
    ) -> Result<Self, LearnError> {
        let mut p = Self::zeros(layers, hidden, input_dim, bounds)?;
        let mut rng = seeded_rng(seed);
        let mut fill = |w: &mut [T], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for v in w {
                *v = T::of(rng.random_range(-a..a));
            }
        };
        for l in 0..layers {
            let o = p.layer_offsets(l);
            let fan_in = o.input + hidden;
            let end = o.b + 4 * hidden;
            fill(&mut p.weights[o.w_ih..end], fan_in);
        }
        let start = p.out_offset();
        fill(&mut p.weights[start..], hidden);
        Ok(p)
    }

    /// Default controller shape: 2 layers of 64 units.
    pub fn default_shape(input_dim: usize, bounds: ControlBounds<T>, seed: u64) -> Self {
        Self::init(DEFAULT_LAYERS, DEFAULT_HIDDEN, input_dim, bounds, seed)
            .expect("positive default shape")
    }

    fn count(layers: usize, hidden: usize, input_dim: usize, output_dim: usize) -> usize {
        let gates = 4 * hidden;
        let mut n = 0;
        for l in 0..layers {
            let input = if l == 0 { input_dim } else { hidden };
            n += gates * (input + hidden + 1);
        }
        n + output_dim * (hidden + 1)
    }

    pub(crate) fn layer_offsets(&self, l: usize) -> LayerOffsets {
        let g = 4 * self.hidden;
        let mut start = 0;
        for j in 0..l {
            let input = if j == 0 { self.input_dim } else { self.hidden };
            start += g * (input + self.hidden + 1);
        }
        let input = if l == 0 { self.input_dim } else { self.hidden };
        LayerOffsets {
            w_ih: start,
            w_hh: start + g * input,
            b: start + g * (input + self.hidden),
            input,
        }
    }

    pub(crate) fn out_offset(&self) -> usize {
        let o = self.layer_offsets(self.layers - 1);
        o.b + 4 * self.hidden
    }

    /// Half-open ranges of every parameter block, in storage order.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut v = Vec::with_capacity(3 * self.layers + 2);
        let g = 4 * self.hidden;
        for l in 0..self.layers {
            let o = self.layer_offsets(l);
            v.push(o.w_ih..o.w_hh);
            v.push(o.w_hh..o.b);
            v.push(o.b..o.b + g);
        }
        let out = self.out_offset();
        let b_out = out + self.output_dim * self.hidden;
        v.push(out..b_out);
        v.push(b_out..self.weights.len());
        v
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn input_map(&self) -> &InputMap<T> {
        &self.input_map
    }

    pub fn set_input_map(&mut self, map: InputMap<T>) -> Result<(), LearnError> {
        if map.mean.len() != self.input_dim || map.range.len() != self.input_dim {
            return Err(LearnError::Shape("input map dimension".into()));
        }
        self.input_map = map;
        Ok(())
    }

    pub fn bounds(&self) -> &ControlBounds<T> {
        &self.bounds
    }

    pub(crate) fn from_parts(
        layers: usize,
        hidden: usize,
        input_dim: usize,
        weights: Vec<T>,
        input_map: InputMap<T>,
        bounds: ControlBounds<T>,
    ) -> Result<Self, LearnError> {
        let mut p = Self::zeros(layers, hidden, input_dim, bounds)?;
        if weights.len() != p.weights.len() {
            return Err(LearnError::Shape(format!(
                "expected {} weights, got {}",
                p.weights.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LearnError::Format("non-finite weight".into()));
        }
        p.weights = weights;
        p.set_input_map(input_map)?;
        Ok(p)
    }

    /// Largest `|tanh|` the read-out emits, keeping outputs strictly inside the box.
    pub(crate) fn tanh_limit() -> T {
        T::one() - T::of(8.0) * T::epsilon()
    }
}

/// Per-layer hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T> {
    pub h: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
}

impl<T: Scalar> HiddenState<T> {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        Self {
            h: vec![vec![T::zero(); hidden]; layers],
            c: vec![vec![T::zero(); hidden]; layers],
        }
    }

    pub fn for_params(p: &LstmParams<T>) -> Self {
        Self::zeros(p.layers, p.hidden)
    }

    fn matches(&self, p: &LstmParams<T>) -> bool {
        self.h.len() == p.layers
            && self.c.len() == p.layers
            && self.h.iter().chain(&self.c).all(|v| v.len() == p.hidden)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out = W x` for a row-major `rows x x.len()` matrix, accumulated into `out`.
#[inline]
pub(crate) fn matvec_acc<T: Scalar>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut s = T::zero();
        for (a, b) in row.iter().zip(x) {
            s += *a * *b;
        }
        *o += s;
    }
}

/// One LSTM cell update; `z` receives the gate pre-activations and then their activations.
pub(crate) fn cell<T: Scalar>(
    p: &LstmParams<T>,
    l: usize,
    x: &[T],
    h: &mut [T],
    c: &mut [T],
    z: &mut [T],
) {
    let hs = p.hidden;
    let o = p.layer_offsets(l);
    let w = &p.weights;
    z.copy_from_slice(&w[o.b..o.b + 4 * hs]);
    matvec_acc(&w[o.w_ih..o.w_hh], x, z);
    matvec_acc(&w[o.w_hh..o.b], h, z);
    for j in 0..hs {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hs + j]);
        let g = z[2 * hs + j].tanh();
        let og = sigmoid(z[3 * hs + j]);
        z[j] = i;
        z[hs + j] = f;
        z[2 * hs + j] = g;
        z[3 * hs + j] = og;
        c[j] = f * c[j] + i * g;
        h[j] = og * c[j].tanh();
    }
}

/// Read-out: returns the squashed value `t = tanh(W_out h + b_out)` (clamped) into `t` and the
/// scaled control into `u`.
pub(crate) fn readout<T: Scalar>(p: &LstmParams<T>, h: &[T], t: &mut [T], u: &mut [T]) {
    let start = p.out_offset();
    let w = &p.weights[start..start + p.output_dim * p.hidden];
    let b = &p.weights[start + p.output_dim * p.hidden..];
    t.copy_from_slice(b);
    matvec_acc(w, h, t);
    let lim = LstmParams::<T>::tanh_limit();
    let lo = p.bounds.lower();
    let hi = p.bounds.upper();
    for j in 0..p.output_dim {
        t[j] = t[j].tanh().max(-lim).min(lim);
        let mid = (lo[j] + hi[j]) / T::of(2.0);
        let half = (hi[j] - lo[j]) / T::of(2.0);
        u[j] = mid + half * t[j];
    }
}

/// One controller step on the raw state `q`; returns the control and the updated hidden state.
pub fn rnn_forward<T: Scalar>(
    p: &LstmParams<T>,
    q: &[T],
    h_prev: &HiddenState<T>,
) -> Result<(Vec<T>, HiddenState<T>), LearnError> {
    if q.len() != p.input_dim {
        return Err(LearnError::Shape(format!(
            "state has {} components, network expects {}",
            q.len(),
            p.input_dim
        )));
    }
    if !h_prev.matches(p) {
        return Err(LearnError::Shape("hidden state shape".into()));
    }
    let mut hs = h_prev.clone();
    let mut u = vec![T::zero(); p.output_dim];
    step_in_place(p, q, &mut hs, &mut Scratch::new(p), &mut u);
    Ok((u, hs))
}

/// Reusable buffers for repeated inference.
pub(crate) struct Scratch<T> {
    x: Vec<T>,
    z: Vec<T>,
    t: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    pub(crate) fn new(p: &LstmParams<T>) -> Self {
        Self {
            x: vec![T::zero(); p.input_dim.max(p.hidden)],
            z: vec![T::zero(); 4 * p.hidden],
            t: vec![T::zero(); p.output_dim],
        }
    }
}

pub(crate) fn step_in_place<T: Scalar>(
    p: &LstmParams<T>,
    q: &[T],
    hs: &mut HiddenState<T>,
    s: &mut Scratch<T>,
    u: &mut [T],
) {
    p.input_map.apply(q, &mut s.x[..p.input_dim]);
    for l in 0..p.layers {
        let width = if l == 0 { p.input_dim } else { p.hidden };
        if l > 0 {
            s.x[..width].copy_from_slice(&hs.h[l - 1]);
        }
        let (h, c) = (&mut hs.h[l], &mut hs.c[l]);
        cell(p, l, &s.x[..width], h, c, &mut s.z);
    }
    readout(p, &hs.h[p.layers - 1], &mut s.t, u);
}

/// Stateful controller wrapper for closed-loop execution.
#[derive(Debug, Clone)]
pub struct RnnController<'a, T> {
    params: &'a LstmParams<T>,
    state: HiddenState<T>,
}

impl<'a, T: Scalar> RnnController<'a, T> {
    pub fn new(params: &'a LstmParams<T>) -> Self {
        Self {
            params,
            state: HiddenState::for_params(params),
        }
    }

    pub fn reset(&mut self) {
        self.state = HiddenState::for_params(self.params);
    }

    /// Advances the recurrence with `q` and returns the predicted reference control.
    pub fn step(&mut self, q: &[T]) -> Result<Vec<T>, LearnError> {
        let (u, h) = rnn_forward(self.params, q, &self.state)?;
        self.state = h;
        Ok(u)
    }
}

/// Teacher-forced unroll from a zero hidden state: one prediction for each of the first
/// `len - 1` states (the final state of a trajectory has no control).
pub fn run_sequence<T: Scalar>(p: &LstmParams<T>, states: &Trace<T>) -> Result<Vec<Vec<T>>, LearnError> {
    if states.dim() != p.input_dim {
        return Err(LearnError::Shape(format!(
            "trace dimension {} differs from network input {}",
            states.dim(),
            p.input_dim
        )));
    }
    let steps = states.len().saturating_sub(1);
    let mut hs = HiddenState::for_params(p);
    let mut s = Scratch::new(p);
    let mut out = Vec::with_capacity(steps);
    for q in states.states().take(steps) {
        let mut u = vec![T::zero(); p.output_dim];
        step_in_place(p, q, &mut hs, &mut s, &mut u);
        out.push(u);
    }
    Ok(out)
}
