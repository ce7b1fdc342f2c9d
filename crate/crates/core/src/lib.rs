//! Temporal-logic control synthesis: STL robustness, discrete-time CBF safety filtering,
//! robustness-maximizing reference control and recurrent imitation controllers.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod learn;
pub mod optim;
pub mod pipeline;
pub mod safety;
pub mod scalar;
pub mod stl;
pub mod systems;

pub use scalar::Scalar;

pub type Formula64 = stl::Formula<f64>;
pub type Formula32 = stl::Formula<f32>;
pub type Trace64 = stl::Trace<f64>;
pub type Trace32 = stl::Trace<f32>;
pub type SystemModel64 = systems::SystemModel<f64>;
pub type SystemModel32 = systems::SystemModel<f32>;
pub type BarrierSet64 = safety::BarrierSet<f64>;
pub type BarrierSet32 = safety::BarrierSet<f32>;
pub type LstmParams64 = learn::LstmParams<f64>;
pub type LstmParams32 = learn::LstmParams<f32>;
pub type DatasetRecord64 = learn::DatasetRecord<f64>;
