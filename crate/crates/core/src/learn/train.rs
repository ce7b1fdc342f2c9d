//! Imitation training: backpropagation through time on the squared control error, Adam updates,
//! gradient-norm clipping and held-out model selection.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cell, readout, HiddenState, InputMap, LearnError, LstmParams};
use crate::optim::seeded_rng;
use crate::safety::Barrier;
use crate::scalar::Scalar;
use crate::systems::ControlBounds;

/// One satisfying trajectory with the reference controls that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord<T> {
    /// `q_0 … q_K`.
    pub states: Vec<Vec<T>>,
    /// `u_0^ref … u_{K-1}^ref`, recorded before safety filtering.
    pub ref_controls: Vec<Vec<T>>,
    pub robustness: T,
    #[serde(default)]
    pub barriers: Vec<Barrier<T>>,
    pub seed: u64,
    #[serde(default)]
    pub scenario_hash: String,
}

impl<T: Scalar> DatasetRecord<T> {
    pub fn steps(&self) -> usize {
        self.ref_controls.len()
    }

    fn check(&self, n: usize, m: usize) -> Result<(), LearnError> {
        if self.states.len() != self.ref_controls.len() + 1 || self.ref_controls.is_empty() {
            return Err(LearnError::Shape(format!(
                "record {} has {} states and {} controls",
                self.seed,
                self.states.len(),
                self.ref_controls.len()
            )));
        }
        if self.states.iter().any(|q| q.len() != n) || self.ref_controls.iter().any(|u| u.len() != m) {
            return Err(LearnError::Shape(format!(
                "record {} does not match state dim {n} / control dim {m}",
                self.seed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// When set, the step size decays geometrically per epoch from `learning_rate` to this value.
    pub final_learning_rate: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of records held out for model selection.
    pub holdout_fraction: f64,
    pub layers: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-3,
            final_learning_rate: None,
            batch_size: 32,
            seed: 0,
            grad_clip: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            holdout_fraction: 0.1,
            layers: super::DEFAULT_LAYERS,
            hidden: super::DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.layers == 0 || self.hidden == 0 {
            return bad("epochs, batch_size, layers and hidden must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0 && self.adam_eps > 0.0) {
            return bad("learning_rate, grad_clip and adam_eps must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam decay rates must lie in [0, 1)");
        }
        if self.final_learning_rate.is_some_and(|f| !(f > 0.0)) {
            return bad("final_learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the lowest held-out loss seen (initial parameters included).
    pub params: LstmParams<T>,
    /// Mean per-record training loss: entry 0 before any update, entry `e` averaged over epoch `e`.
    pub train_loss: Vec<T>,
    /// Mean per-record held-out loss after each epoch (entry 0 at initialization).
    pub holdout_loss: Vec<T>,
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

/// Activations of one layer at one time step.
#[derive(Debug, Clone, Default)]
struct LayerTape<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    gates: Vec<T>,
    tc: Vec<T>,
}

/// Forward activations of a full unroll, reused between records.
struct Tape<T> {
    layers: Vec<Vec<LayerTape<T>>>,
    t: Vec<Vec<T>>,
    u: Vec<Vec<T>>,
    top_h: Vec<Vec<T>>,
}

impl<T: Scalar> Tape<T> {
    fn new() -> Self {
        Self {
            layers: Vec::new(),
            t: Vec::new(),
            u: Vec::new(),
            top_h: Vec::new(),
        }
    }

    fn forward(&mut self, p: &LstmParams<T>, states: &[Vec<T>], steps: usize) {
        let (nl, hs, m) = (p.layers, p.hidden, p.output_dim);
        if self.layers.len() < steps {
            self.layers.resize_with(steps, || vec![LayerTape::default(); nl]);
            self.t.resize(steps, vec![T::zero(); m]);
            self.u.resize(steps, vec![T::zero(); m]);
            self.top_h.resize(steps, vec![T::zero(); hs]);
        }
        let mut st = HiddenState::zeros(nl, hs);
        let mut z = vec![T::zero(); 4 * hs];
        for (k, q) in states.iter().take(steps).enumerate() {
            for l in 0..nl {
                let slot = &mut self.layers[k][l];
                let width = if l == 0 { p.input_dim } else { hs };
                slot.x.resize(width, T::zero());
                if l == 0 {
                    p.input_map.apply(q, &mut slot.x);
                } else {
                    slot.x.copy_from_slice(&st.h[l - 1]);
                }
                slot.h_prev.clone_from(&st.h[l]);
                slot.c_prev.clone_from(&st.c[l]);
                cell(p, l, &slot.x, &mut st.h[l], &mut st.c[l], &mut z);
                slot.gates.clone_from(&z);
                slot.tc.clear();
                slot.tc.extend(st.c[l].iter().map(|c| c.tanh()));
            }
            self.top_h[k].copy_from_slice(&st.h[nl - 1]);
            readout(p, &st.h[nl - 1], &mut self.t[k], &mut self.u[k]);
        }
    }
}

fn squared_error<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// `Σ_k ‖û_k − u_k^ref‖²` under teacher forcing.
pub fn record_loss<T: Scalar>(p: &LstmParams<T>, record: &DatasetRecord<T>) -> T {
    let mut tape = Tape::new();
    record_loss_with(p, record, &mut tape)
}

fn record_loss_with<T: Scalar>(p: &LstmParams<T>, record: &DatasetRecord<T>, tape: &mut Tape<T>) -> T {
    let steps = record.steps();
    tape.forward(p, &record.states, steps);
    (0..steps)
        .map(|k| squared_error(&tape.u[k], &record.ref_controls[k]))
        .sum()
}

/// Mean Euclidean control error per step over `records`.
pub fn mean_step_error<T: Scalar>(p: &LstmParams<T>, records: &[&DatasetRecord<T>]) -> T {
    let mut tape = Tape::new();
    let mut total = T::zero();
    let mut count = 0usize;
    for r in records {
        let steps = r.steps();
        tape.forward(p, &r.states, steps);
        for k in 0..steps {
            total += squared_error(&tape.u[k], &r.ref_controls[k]).sqrt();
        }
        count += steps;
    }
    if count == 0 {
        T::zero()
    } else {
        total / T::of(count as f64)
    }
}

/// Adds the gradient of [`record_loss`] to `grad` and returns the loss.
pub fn loss_gradient<T: Scalar>(p: &LstmParams<T>, record: &DatasetRecord<T>, grad: &mut [T]) -> T {
    let mut tape = Tape::new();
    let mut bw = Backward::new(p);
    bw.run(p, record, &mut tape, grad)
}

struct Backward<T> {
    dh_rec: Vec<Vec<T>>,
    dc_rec: Vec<Vec<T>>,
    dh_in: Vec<T>,
    dz: Vec<T>,
    dy: Vec<T>,
}

impl<T: Scalar> Backward<T> {
    fn new(p: &LstmParams<T>) -> Self {
        Self {
            dh_rec: vec![vec![T::zero(); p.hidden]; p.layers],
            dc_rec: vec![vec![T::zero(); p.hidden]; p.layers],
            dh_in: vec![T::zero(); p.hidden],
            dz: vec![T::zero(); 4 * p.hidden],
            dy: vec![T::zero(); p.output_dim],
        }
    }

    fn run(
        &mut self,
        p: &LstmParams<T>,
        record: &DatasetRecord<T>,
        tape: &mut Tape<T>,
        grad: &mut [T],
    ) -> T {
        let steps = record.steps();
        tape.forward(p, &record.states, steps);
        let (hs, m) = (p.hidden, p.output_dim);
        let out = p.out_offset();
        let w = &p.weights;
        let half = p.bounds.half_width();
        for v in self.dh_rec.iter_mut().chain(self.dc_rec.iter_mut()) {
            v.fill(T::zero());
        }
        let mut loss = T::zero();
        let two = T::of(2.0);

        for k in (0..steps).rev() {
            let target = &record.ref_controls[k];
            for j in 0..m {
                let e = tape.u[k][j] - target[j];
                loss += e * e;
                let t = tape.t[k][j];
                self.dy[j] = two * e * half[j] * (T::one() - t * t);
            }
            let h_top = &tape.top_h[k];
            let (gw_out, gb_out) = grad[out..].split_at_mut(m * hs);
            for j in 0..m {
                let dy = self.dy[j];
                gb_out[j] += dy;
                for (g, h) in gw_out[j * hs..(j + 1) * hs].iter_mut().zip(h_top) {
                    *g += dy * *h;
                }
            }
            self.dh_in.fill(T::zero());
            for j in 0..m {
                let dy = self.dy[j];
                for (d, wv) in self.dh_in.iter_mut().zip(&w[out + j * hs..out + (j + 1) * hs]) {
                    *d += dy * *wv;
                }
            }

            for l in (0..p.layers).rev() {
                let slot = &tape.layers[k][l];
                let o = p.layer_offsets(l);
                let g = &slot.gates;
                let dh_rec = &mut self.dh_rec[l];
                let dc_rec = &mut self.dc_rec[l];
                for j in 0..hs {
                    let dh = self.dh_in[j] + dh_rec[j];
                    let (ig, fg, gg, og) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
                    let tc = slot.tc[j];
                    let dc = dh * og * (T::one() - tc * tc) + dc_rec[j];
                    self.dz[j] = dc * gg * ig * (T::one() - ig);
                    self.dz[hs + j] = dc * slot.c_prev[j] * fg * (T::one() - fg);
                    self.dz[2 * hs + j] = dc * ig * (T::one() - gg * gg);
                    self.dz[3 * hs + j] = dh * tc * og * (T::one() - og);
                    dc_rec[j] = dc * fg;
                }
                let width = o.input;
                for (r, &dz) in self.dz.iter().enumerate() {
                    grad[o.b + r] += dz;
                    let gi = &mut grad[o.w_ih + r * width..o.w_ih + (r + 1) * width];
                    for (gv, xv) in gi.iter_mut().zip(&slot.x) {
                        *gv += dz * *xv;
                    }
                    let gh = &mut grad[o.w_hh + r * hs..o.w_hh + (r + 1) * hs];
                    for (gv, hv) in gh.iter_mut().zip(&slot.h_prev) {
                        *gv += dz * *hv;
                    }
                }
                dh_rec.fill(T::zero());
                for (r, &dz) in self.dz.iter().enumerate() {
                    for (d, wv) in dh_rec.iter_mut().zip(&w[o.w_hh + r * hs..o.w_hh + (r + 1) * hs]) {
                        *d += dz * *wv;
                    }
                }
                if l > 0 {
                    self.dh_in.fill(T::zero());
                    for (r, &dz) in self.dz.iter().enumerate() {
                        for (d, wv) in self.dh_in.iter_mut().zip(&w[o.w_ih + r * width..o.w_ih + (r + 1) * width]) {
                            *d += dz * *wv;
                        }
                    }
                }
            }
        }
        loss
    }
}

/// Step size used during `epoch` (1-based).
fn epoch_learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.final_learning_rate {
        Some(f) if cfg.epochs > 1 => {
            let frac = (epoch - 1) as f64 / (cfg.epochs - 1) as f64;
            cfg.learning_rate * (f / cfg.learning_rate).powf(frac)
        }
        _ => cfg.learning_rate,
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    lr: T,
    b1: T,
    b2: T,
    eps: T,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            lr: T::of(cfg.learning_rate),
            b1: T::of(cfg.beta1),
            b2: T::of(cfg.beta2),
            eps: T::of(cfg.adam_eps),
        }
    }

    fn update(&mut self, w: &mut [T], g: &[T]) {
        self.t += 1;
        let c1 = T::one() - self.b1.powi(self.t);
        let c2 = T::one() - self.b2.powi(self.t);
        for i in 0..w.len() {
            self.m[i] = self.b1 * self.m[i] + (T::one() - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (T::one() - self.b2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn check_dataset<T: Scalar>(
    dataset: &[DatasetRecord<T>],
    bounds: &ControlBounds<T>,
) -> Result<usize, LearnError> {
    let first = dataset.first().ok_or(LearnError::EmptyDataset)?;
    let n = first.states.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(LearnError::Shape("records must hold non-empty states".into()));
    }
    for r in dataset {
        r.check(n, bounds.dim())?;
    }
    Ok(n)
}

fn mean_loss<T: Scalar>(
    p: &LstmParams<T>,
    dataset: &[DatasetRecord<T>],
    idx: &[usize],
    tape: &mut Tape<T>,
) -> T {
    let total: T = idx.iter().map(|&i| record_loss_with(p, &dataset[i], tape)).sum();
    total / T::of(idx.len().max(1) as f64)
}

/// Trains a controller for `bounds` by imitation of the recorded reference controls.
///
/// Records are split once (seeded) into a training part and a held-out part of
/// `holdout_fraction`; with a single record the training record doubles as the held-out set.
pub fn train<T: Scalar>(
    dataset: &[DatasetRecord<T>],
    bounds: &ControlBounds<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, LearnError> {
    cfg.validate()?;
    let n = check_dataset(dataset, bounds)?;
    let mut rng = seeded_rng(cfg.seed);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if dataset.len() < 2 || cfg.holdout_fraction == 0.0 {
        0
    } else {
        ((dataset.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, dataset.len() - 1)
    };
    let holdout_indices: Vec<usize> = order[..n_hold].to_vec();
    let mut train_indices: Vec<usize> = order[n_hold..].to_vec();
    let selection = if holdout_indices.is_empty() {
        train_indices.clone()
    } else {
        holdout_indices.clone()
    };

    let mut params = LstmParams::init(cfg.layers, cfg.hidden, n, bounds.clone(), rng.random())?;
    let map = InputMap::fit(
        train_indices
            .iter()
            .flat_map(|&i| dataset[i].states.iter().map(Vec::as_slice)),
        n,
    );
    params.set_input_map(map)?;

    let mut tape = Tape::new();
    let mut bw = Backward::new(&params);
    let mut adam = Adam::new(params.weights.len(), cfg);
    let mut grad = vec![T::zero(); params.weights.len()];
    let clip = T::of(cfg.grad_clip);

    let mut train_loss = vec![mean_loss(&params, dataset, &train_indices, &mut tape)];
    let mut holdout_loss = vec![mean_loss(&params, dataset, &selection, &mut tape)];
    let mut best = (holdout_loss[0], params.clone(), 0usize);

    for epoch in 1..=cfg.epochs {
        adam.lr = T::of(epoch_learning_rate(cfg, epoch));
        train_indices.shuffle(&mut rng);
        let mut epoch_total = T::zero();
        for batch in train_indices.chunks(cfg.batch_size) {
            grad.fill(T::zero());
            for &i in batch {
                epoch_total += bw.run(&params, &dataset[i], &mut tape, &mut grad);
            }
            let scale = T::one() / T::of(batch.len() as f64);
            let mut norm2 = T::zero();
            for g in grad.iter_mut() {
                *g *= scale;
                norm2 += *g * *g;
            }
            let norm = norm2.sqrt();
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.update(&mut params.weights, &grad);
        }
        train_loss.push(epoch_total / T::of(train_indices.len() as f64));
        let h = mean_loss(&params, dataset, &selection, &mut tape);
        holdout_loss.push(h);
        if h < best.0 {
            best = (h, params.clone(), epoch);
        }
    }

    Ok(TrainOutcome {
        params: best.1,
        train_loss,
        holdout_loss,
        best_epoch: best.2,
        train_indices,
        holdout_indices,
    })
}

/// Number of parameters sampled by the gradient checks.
pub const GRADIENT_CHECK_SAMPLES: usize = 50;
const GRADIENT_CHECK_STEP: f64 = 1e-5;
const GRADIENT_CHECK_FLOOR: f64 = 1e-5;
const GRADIENT_CHECK_SEED: u64 = 0x5eed;

/// Largest relative error between the analytic gradient and central finite differences over
/// sampled parameters. Meaningful in `f64`.
pub fn gradient_check<T: Scalar>(p: &LstmParams<T>, record: &DatasetRecord<T>) -> Result<T, LearnError> {
    let mut grad = vec![T::zero(); p.weights.len()];
    loss_gradient(p, record, &mut grad);
    gradient_check_against(p, record, &grad)
}

/// As [`gradient_check`] but against a caller-supplied gradient.
///
/// Samples cycle through the parameter blocks so every matrix and bias is probed;
/// the error is `|a − n| / max(|n|, 1e-5)`.
pub fn gradient_check_against<T: Scalar>(
    p: &LstmParams<T>,
    record: &DatasetRecord<T>,
    analytic: &[T],
) -> Result<T, LearnError> {
    if analytic.len() != p.weights.len() {
        return Err(LearnError::Shape("gradient length".into()));
    }
    if record.states.len() < 2 {
        return Err(LearnError::Shape("gradient check needs at least two states".into()));
    }
    record.check(p.input_dim, p.output_dim)?;
    let blocks = p.blocks();
    let mut rng = seeded_rng(GRADIENT_CHECK_SEED);
    let mut probe = p.clone();
    let mut tape = Tape::new();
    let h = T::of(GRADIENT_CHECK_STEP);
    let floor = T::of(GRADIENT_CHECK_FLOOR);
    let mut worst = T::zero();
    for s in 0..GRADIENT_CHECK_SAMPLES {
        let b = &blocks[s % blocks.len()];
        let i = rng.random_range(b.clone());
        let w0 = probe.weights[i];
        probe.weights[i] = w0 + h;
        let fp = record_loss_with(&probe, record, &mut tape);
        probe.weights[i] = w0 - h;
        let fm = record_loss_with(&probe, record, &mut tape);
        probe.weights[i] = w0;
        let num = (fp - fm) / (h + h);
        let err = (analytic[i] - num).abs() / num.abs().max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig { epochs: 5, learning_rate: 1e-2, final_learning_rate: Some(1e-4), ..Default::default() };
        assert_eq!(epoch_learning_rate(&cfg, 1), 1e-2);
        assert!((epoch_learning_rate(&cfg, 3) - 1e-3).abs() < 1e-15);
        assert!((epoch_learning_rate(&cfg, 5) - 1e-4).abs() < 1e-15);
        let flat = TrainConfig { final_learning_rate: None, ..cfg };
        assert_eq!(epoch_learning_rate(&flat, 4), 1e-2);
    }
    use crate::learn::run_sequence;
    use crate::stl::Trace;

    fn bounds() -> ControlBounds<f64> {
        ControlBounds::new(vec![0.0, -0.5], vec![1.0, 0.5]).unwrap()
    }

    fn record(seed: u64, steps: usize) -> DatasetRecord<f64> {
        let mut rng = seeded_rng(seed);
        let states = (0..=steps)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let ref_controls = (0..steps)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(-0.5..0.5)])
            .collect();
        DatasetRecord {
            states,
            ref_controls,
            robustness: 0.1,
            barriers: vec![],
            seed,
            scenario_hash: String::new(),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut p = LstmParams::init(2, 8, 3, bounds(), 3).unwrap();
        p.set_input_map(InputMap {
            mean: vec![5.0; 3],
            range: vec![10.0; 3],
        })
        .unwrap();
        let r = record(1, 6);
        let err = gradient_check(&p, &r).unwrap();
        assert!(err < 1e-4, "{err}");

        let mut g = vec![0.0; p.weights().len()];
        loss_gradient(&p, &r, &mut g);
        let hh = p.blocks()[1].clone();
        for v in &mut g[hh] {
            *v *= 2.0;
        }
        let planted = gradient_check_against(&p, &r, &g).unwrap();
        assert!((planted - 1.0).abs() < 0.1, "{planted}");
    }

    #[test]
    fn loss_matches_sequence_predictions() {
        let p = LstmParams::init(2, 8, 3, bounds(), 5).unwrap();
        let r = record(2, 4);
        let pred = run_sequence(&p, &Trace::from_states(&r.states, 0).unwrap()).unwrap();
        let manual: f64 = pred
            .iter()
            .zip(&r.ref_controls)
            .map(|(a, b)| squared_error(a, b))
            .sum();
        assert!((record_loss(&p, &r) - manual).abs() < 1e-12);
    }

    #[test]
    fn midpoint_dataset_is_a_fixed_point_of_zero_network() {
        let p = LstmParams::zeros(2, 8, 3, bounds()).unwrap();
        let mut r = record(3, 5);
        r.ref_controls = vec![vec![0.5, 0.0]; 5];
        assert_eq!(record_loss(&p, &r), 0.0);
        let mut g = vec![0.0; p.weights().len()];
        loss_gradient(&p, &r, &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_network_overfits_one_record() {
        let cfg = TrainConfig {
            epochs: 300,
            hidden: 16,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let r = record(4, 8);
        let out = train(std::slice::from_ref(&r), &bounds(), &cfg).unwrap();
        assert_eq!(out.train_loss.len(), 301);
        let last = record_loss(&out.params, &r);
        assert!(last < 1e-2 * out.train_loss[0], "{} -> {last}", out.train_loss[0]);
    }

    #[test]
    fn training_is_deterministic_and_validates() {
        let cfg = TrainConfig {
            epochs: 3,
            hidden: 8,
            ..TrainConfig::default()
        };
        let data: Vec<_> = (0..5).map(|s| record(s, 4)).collect();
        let a = train(&data, &bounds(), &cfg).unwrap();
        let b = train(&data, &bounds(), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.holdout_indices.len(), 1);
        assert!(matches!(train::<f64>(&[], &bounds(), &cfg), Err(LearnError::EmptyDataset)));
        let mut bad = data[0].clone();
        bad.ref_controls.pop();
        assert!(matches!(train(&[bad], &bounds(), &cfg), Err(LearnError::Shape(_))));
        let zero_epochs = TrainConfig {
            epochs: 0,
            ..cfg
        };
        assert!(matches!(train(&data, &bounds(), &zero_epochs), Err(LearnError::Config(_))));
    }
}
