//! Discrete-time plant models, control bounds, additive disturbances and rollouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::stl::Trace;

/// Angular speeds below this magnitude use the straight-line limit of the unicycle map.
pub const UNICYCLE_STRAIGHT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("expected {what} of dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("control {index} is outside the control bounds")]
    OutOfBounds { index: usize },
    #[error("invalid control bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid disturbance: {0}")]
    InvalidDisturbance(String),
}

/// Box `U = [lower, upper]` of admissible controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> ControlBounds<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self, SystemError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(SystemError::InvalidBounds(
                "lower and upper must be non-empty and equally long".into(),
            ));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(SystemError::InvalidBounds(
                "bounds must be finite with lower < upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, h))| x >= l && x <= h)
    }

    pub fn clamp(&self, u: &mut [T]) {
        for (x, (l, h)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.max(*l).min(*h);
        }
    }

    pub fn midpoint(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, h)| (*l + *h) / T::of(2.0))
            .collect()
    }

    pub fn half_width(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, h)| (*h - *l) / T::of(2.0))
            .collect()
    }

    pub fn diagonal(&self) -> T {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, h)| (*h - *l) * (*h - *l))
            .sum::<T>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `q = (x, y, θ)`, `u = (v, ω)`.
    Unicycle,
    /// `q = (x, y)`, `u = (u_x, u_y)`.
    Integrator,
}

impl ModelKind {
    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::Unicycle => 3,
            ModelKind::Integrator => 2,
        }
    }

    pub fn control_dim(self) -> usize {
        2
    }
}

/// Discrete-time transition map `q_{k+1} = f(q_k, u_k)` with its control box.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel<T> {
    kind: ModelKind,
    bounds: ControlBounds<T>,
}

impl<T: Scalar> SystemModel<T> {
    pub fn new(kind: ModelKind, bounds: ControlBounds<T>) -> Result<Self, SystemError> {
        if bounds.dim() != kind.control_dim() {
            return Err(SystemError::Dimension {
                what: "control bounds",
                expected: kind.control_dim(),
                got: bounds.dim(),
            });
        }
        Ok(Self { kind, bounds })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.kind.control_dim()
    }

    pub fn bounds(&self) -> &ControlBounds<T> {
        &self.bounds
    }

    fn check(&self, q: &[T], u: &[T]) -> Result<(), SystemError> {
        if q.len() != self.state_dim() {
            return Err(SystemError::Dimension {
                what: "state",
                expected: self.state_dim(),
                got: q.len(),
            });
        }
        if u.len() != self.control_dim() {
            return Err(SystemError::Dimension {
                what: "control",
                expected: self.control_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// One application of the model map. Does not clamp `u`.
    pub fn step(&self, q: &[T], u: &[T]) -> Result<Vec<T>, SystemError> {
        self.check(q, u)?;
        let mut out = vec![T::zero(); q.len()];
        self.step_into(q, u, &mut out);
        Ok(out)
    }

    /// Unchecked [`SystemModel::step`] writing into `out`.
    #[inline]
    pub fn step_into(&self, q: &[T], u: &[T], out: &mut [T]) {
        match self.kind {
            ModelKind::Integrator => {
                out[0] = q[0] + u[0];
                out[1] = q[1] + u[1];
            }
            ModelKind::Unicycle => {
                let (x, y, th) = (q[0], q[1], q[2]);
                let (v, w) = (u[0], u[1]);
                if w.abs() < T::of(UNICYCLE_STRAIGHT_EPS) {
                    out[0] = x + v * th.cos();
                    out[1] = y + v * th.sin();
                } else {
                    // v/ω (sin(θ+ω) - sin θ) = 2v/ω cos(θ+ω/2) sin(ω/2), likewise for y.
                    let half = w / T::of(2.0);
                    let chord = T::of(2.0) * v * half.sin() / w;
                    let mid = th + half;
                    out[0] = x + chord * mid.cos();
                    out[1] = y + chord * mid.sin();
                }
                out[2] = th + w;
            }
        }
    }

    /// Nominal rollout without bound checks; the result has `controls.len() + 1` samples.
    pub fn rollout_unchecked<C: AsRef<[T]>>(&self, q0: &[T], controls: &[C]) -> Trace<T> {
        let mut tr = Trace::empty(q0.len());
        tr.push(q0);
        let mut next = vec![T::zero(); q0.len()];
        for u in controls {
            self.step_into(tr.last().unwrap(), u.as_ref(), &mut next);
            tr.push(&next);
        }
        tr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    #[default]
    None,
    UniformBox,
}

/// Additive bounded disturbance `w ∈ [-half_width, half_width]`, drawn i.i.d. per step.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec<T> {
    pub kind: DisturbanceKind,
    pub half_width: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> DisturbanceSpec<T> {
    pub fn none() -> Self {
        Self {
            kind: DisturbanceKind::None,
            half_width: Vec::new(),
            seed: 0,
        }
    }

    pub fn uniform_box(half_width: Vec<T>, seed: u64) -> Result<Self, SystemError> {
        if half_width.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(SystemError::InvalidDisturbance(
                "half widths must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            kind: DisturbanceKind::UniformBox,
            half_width,
            seed,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stream(&self) -> DisturbanceStream<T> {
        DisturbanceStream {
            spec: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// Reproducible sequence of disturbance samples.
#[derive(Debug, Clone)]
pub struct DisturbanceStream<T> {
    spec: DisturbanceSpec<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> DisturbanceStream<T> {
    /// Adds the next sample to `q` in place.
    pub fn apply(&mut self, q: &mut [T]) {
        if self.spec.kind == DisturbanceKind::None {
            return;
        }
        for (x, w) in q.iter_mut().zip(&self.spec.half_width) {
            if *w > T::zero() {
                let r: f64 = self.rng.random_range(-1.0..=1.0);
                *x += *w * T::of(r);
            }
        }
    }

    pub fn sample(&mut self, dim: usize) -> Vec<T> {
        let mut w = vec![T::zero(); dim];
        self.apply(&mut w);
        w
    }
}

/// Trajectory `q_0 … q_K` from `q0` under `controls`, with disturbance added after each step.
pub fn rollout<T: Scalar, C: AsRef<[T]>>(
    model: &SystemModel<T>,
    q0: &[T],
    controls: &[C],
    dist: &DisturbanceSpec<T>,
) -> Result<Trace<T>, SystemError> {
    if q0.len() != model.state_dim() {
        return Err(SystemError::Dimension {
            what: "initial state",
            expected: model.state_dim(),
            got: q0.len(),
        });
    }
    if dist.kind == DisturbanceKind::UniformBox && dist.half_width.len() != model.state_dim() {
        return Err(SystemError::Dimension {
            what: "disturbance half width",
            expected: model.state_dim(),
            got: dist.half_width.len(),
        });
    }
    for (index, u) in controls.iter().enumerate() {
        let u = u.as_ref();
        if u.len() != model.control_dim() {
            return Err(SystemError::Dimension {
                what: "control",
                expected: model.control_dim(),
                got: u.len(),
            });
        }
        if !model.bounds().contains(u) {
            return Err(SystemError::OutOfBounds { index });
        }
    }
    let mut stream = dist.stream();
    let mut tr = Trace::empty(q0.len());
    tr.push(q0);
    let mut next = vec![T::zero(); q0.len()];
    for u in controls {
        model.step_into(tr.last().unwrap(), u.as_ref(), &mut next);
        stream.apply(&mut next);
        tr.push(&next);
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrator() -> SystemModel<f64> {
        SystemModel::new(
            ModelKind::Integrator,
            ControlBounds::new(vec![-0.6, -0.6], vec![0.6, 0.6]).unwrap(),
        )
        .unwrap()
    }

    fn unicycle() -> SystemModel<f64> {
        SystemModel::new(
            ModelKind::Unicycle,
            ControlBounds::new(vec![0.0, -0.5], vec![1.0, 0.5]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn integrator_step() {
        let q = integrator().step(&[1.0, 2.0], &[0.3, -0.1]).unwrap();
        assert!((q[0] - 1.3).abs() < 1e-15 && (q[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn unicycle_turning_step() {
        let q = unicycle().step(&[0.0, 0.0, 0.0], &[1.0, 0.5]).unwrap();
        // 2 sin(0.5), 2 (1 - cos(0.5)) at 30 digits
        assert!((q[0] - 0.958_851_077_208_406).abs() < 1e-14);
        assert!((q[1] - 0.244_834_876_219_254_57).abs() < 1e-14);
        assert_eq!(q[2], 0.5);
    }

    #[test]
    fn unicycle_straight_step() {
        let q = unicycle().step(&[0.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(q, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn step_dimension_mismatch() {
        assert!(matches!(
            unicycle().step(&[0.0, 0.0], &[1.0, 0.0]),
            Err(SystemError::Dimension { what: "state", .. })
        ));
        assert!(matches!(
            integrator().step(&[0.0, 0.0], &[1.0]),
            Err(SystemError::Dimension { what: "control", .. })
        ));
    }

    #[test]
    fn model_rejects_wrong_bounds() {
        let b = ControlBounds::new(vec![0.0], vec![1.0]).unwrap();
        assert!(SystemModel::new(ModelKind::Unicycle, b).is_err());
        assert!(ControlBounds::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn rollout_integrator() {
        let tr = rollout(
            &integrator(),
            &[0.0, 0.0],
            &[[0.1, 0.0], [0.1, 0.0]],
            &DisturbanceSpec::none(),
        )
        .unwrap();
        assert_eq!(tr.len(), 3);
        assert_eq!(tr.state(1), &[0.1, 0.0]);
        assert!((tr.state(2)[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empty_rollout_is_initial_state() {
        let controls: [[f64; 2]; 0] = [];
        let tr = rollout(&unicycle(), &[1.0, 2.0, 3.0], &controls, &DisturbanceSpec::none()).unwrap();
        assert_eq!(tr.to_rows(), vec![vec![1.0, 2.0, 3.0]]);
    }

    #[test]
    fn rollout_reports_out_of_bounds_index() {
        let err = rollout(
            &integrator(),
            &[0.0, 0.0],
            &[[0.1, 0.0], [0.7, 0.0]],
            &DisturbanceSpec::none(),
        )
        .unwrap_err();
        assert_eq!(err, SystemError::OutOfBounds { index: 1 });
    }

    #[test]
    fn seeded_disturbance_is_reproducible() {
        let d = DisturbanceSpec::uniform_box(vec![0.05, 0.05], 7).unwrap();
        let controls = vec![[0.1, 0.2]; 10];
        let a = rollout(&integrator(), &[0.0, 0.0], &controls, &d).unwrap();
        let b = rollout(&integrator(), &[0.0, 0.0], &controls, &d).unwrap();
        assert_eq!(a, b);
        let c = rollout(&integrator(), &[0.0, 0.0], &controls, &d.clone().with_seed(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bounds_helpers() {
        let b = ControlBounds::new(vec![0.0, -0.5], vec![1.0, 0.5]).unwrap();
        assert_eq!(b.midpoint(), vec![0.5, 0.0]);
        assert_eq!(b.half_width(), vec![0.5, 0.5]);
        let mut u = vec![2.0, -3.0];
        b.clamp(&mut u);
        assert_eq!(u, vec![1.0, -0.5]);
    }
}
