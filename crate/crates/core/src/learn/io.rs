//! Versioned JSON container for controller parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputMap, LearnError, LstmParams};
use crate::scalar::Scalar;
use crate::systems::ControlBounds;

const FORMAT: &str = "stlctl-lstm";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    format: String,
    version: u32,
    layers: usize,
    hidden: usize,
    input_dim: usize,
    output_dim: usize,
    input_mean: Vec<f64>,
    input_range: Vec<f64>,
    control_lower: Vec<f64>,
    control_upper: Vec<f64>,
    /// Flat buffer in the layout documented on [`LstmParams`].
    weights: Vec<f64>,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::of(*x)).collect()
}

pub fn params_to_json<T: Scalar>(p: &LstmParams<T>) -> Result<String, LearnError> {
    let file = ParamFile {
        format: FORMAT.into(),
        version: VERSION,
        layers: p.layers,
        hidden: p.hidden,
        input_dim: p.input_dim,
        output_dim: p.output_dim,
        input_mean: to_f64(&p.input_map.mean),
        input_range: to_f64(&p.input_map.range),
        control_lower: to_f64(p.bounds.lower()),
        control_upper: to_f64(p.bounds.upper()),
        weights: to_f64(&p.weights),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn params_from_json<T: Scalar>(text: &str) -> Result<LstmParams<T>, LearnError> {
    let f: ParamFile = serde_json::from_str(text)?;
    if f.format != FORMAT || f.version != VERSION {
        return Err(LearnError::Format(format!(
            "unsupported container {} v{}",
            f.format, f.version
        )));
    }
    let bounds = ControlBounds::new(from_f64(&f.control_lower), from_f64(&f.control_upper))
        .map_err(|e| LearnError::Format(e.to_string()))?;
    if bounds.dim() != f.output_dim {
        return Err(LearnError::Shape("output dimension differs from control bounds".into()));
    }
    let map = InputMap {
        mean: from_f64(&f.input_mean),
        range: from_f64(&f.input_range),
    };
    LstmParams::from_parts(f.layers, f.hidden, f.input_dim, from_f64(&f.weights), map, bounds)
}

pub fn save_params<T: Scalar>(p: &LstmParams<T>, path: &Path) -> Result<(), LearnError> {
    fs::write(path, params_to_json(p)?)?;
    Ok(())
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<LstmParams<T>, LearnError> {
    params_from_json(&fs::read_to_string(path)?)
}
