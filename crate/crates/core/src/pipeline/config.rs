//! Scenario configuration files and their validated, ready-to-run form.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::learn::TrainConfig;
use crate::optim::OptimizerSettings;
use crate::safety::{Barrier, BarrierSet};
use crate::stl::{horizon, parse_formula, Formula, PredicateTable};
use crate::systems::{ControlBounds, DisturbanceKind, DisturbanceSpec, ModelKind, SystemModel};

pub const CASE1_TOML: &str = include_str!("../../scenarios/case1.toml");
pub const CASE2_TOML: &str = include_str!("../../scenarios/case2.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FullHorizon,
    Mpc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxConfig {
    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, h))| x >= l && x <= h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Distance from `p` to the box in the plane of the first two components.
    fn distance_2d(&self, p: [f64; 2]) -> f64 {
        let dx = (self.lower[0] - p[0]).max(0.0).max(p[0] - self.upper[0]);
        let dy = (self.lower[1] - p[1]).max(0.0).max(p[1] - self.upper[1]);
        dx.hypot(dy)
    }
}

/// Named axis-aligned region registered as a predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub name: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Normalization scale of the region's halfplane predicates.
    pub scale: f64,
}

impl RegionConfig {
    pub fn as_box(&self) -> BoxConfig {
        BoxConfig {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }
}

/// Initial states: uniform over a region (leading components) and an extra box (the rest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub region: String,
    #[serde(default)]
    pub extra_lower: Vec<f64>,
    #[serde(default)]
    pub extra_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDisksConfig {
    pub count: usize,
    /// `[min, max]` radius.
    pub radius: [f64; 2],
    /// Disks may not intersect these regions.
    #[serde(default)]
    pub keep_clear: Vec<String>,
    /// Disks may not contain the centers of these regions.
    #[serde(default)]
    pub keep_centers_clear: Vec<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_attempts() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    pub alpha: f64,
    pub deviation_weights: Vec<f64>,
    #[serde(default)]
    pub barriers: Vec<Barrier<f64>>,
    pub random_disks: Option<RandomDisksConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub half_width: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub h_p: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Apply the scenario disturbance during controller evaluation.
    #[serde(default)]
    pub disturbance: bool,
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub formula: String,
    pub mode: Mode,
    /// Final time `K`; defaults to the formula horizon.
    pub final_time: Option<usize>,
    pub lambda: f64,
    pub model: ModelConfig,
    pub workspace: BoxConfig,
    pub regions: Vec<RegionConfig>,
    pub init: InitConfig,
    pub safety: SafetyConfig,
    pub disturbance: DisturbanceConfig,
    pub mpc: Option<MpcConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    /// Default training settings for controllers of this scenario; not part of the hash.
    #[serde(default)]
    pub training: TrainConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Inner formula and window count of a `G[0,k1] φ` task.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSpec {
    pub phi: Formula<f64>,
    pub k1: usize,
    pub h_p: usize,
}

/// Validated scenario with every object built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: SystemModel<f64>,
    pub table: PredicateTable<f64>,
    pub formula: Formula<f64>,
    pub mpc: Option<MpcSpec>,
    pub final_time: usize,
    init_box: BoxConfig,
    hash: String,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let c = &config;
        let bounds = ControlBounds::new(c.model.control_lower.clone(), c.model.control_upper.clone())?;
        let model = SystemModel::new(c.model.kind, bounds)?;
        let n = model.state_dim();

        if c.workspace.lower.len() != 2 || c.workspace.upper.len() != 2 {
            return bad("workspace must be two-dimensional".into());
        }
        let mut table = PredicateTable::new();
        for r in &c.regions {
            if r.lower.len() > n {
                return bad(format!("region {} has more components than the state", r.name));
            }
            table.insert_box(&r.name, &r.lower, &r.upper, r.scale)?;
        }
        let formula = parse_formula(&c.formula, &table)?;

        let (mpc, final_time) = match c.mode {
            Mode::FullHorizon => {
                let k = c.final_time.unwrap_or_else(|| horizon(&formula));
                if k < horizon(&formula) || k == 0 {
                    return bad(format!(
                        "final_time {k} shorter than the formula horizon {}",
                        horizon(&formula)
                    ));
                }
                (None, k)
            }
            Mode::Mpc => {
                let Formula::Always(iv, phi) = &formula else {
                    return bad("mpc mode needs a formula of the form G[0,k1](phi)".into());
                };
                if iv.start() != 0 {
                    return bad("mpc mode needs a G window starting at 0".into());
                }
                let h_p = c.mpc.as_ref().map_or(0, |m| m.h_p);
                let k = horizon(&formula);
                if c.final_time.is_some_and(|f| f != k) {
                    return bad(format!("mpc final_time must equal the formula horizon {k}"));
                }
                if horizon(phi) == 0 && h_p == 0 {
                    return bad("mpc needs h_p + hrz(phi) > 0".into());
                }
                let spec = MpcSpec {
                    phi: (**phi).clone(),
                    k1: iv.end(),
                    h_p,
                };
                (Some(spec), k)
            }
        };

        if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative".into());
        }
        let region = c
            .regions
            .iter()
            .find(|r| r.name == c.init.region)
            .ok_or_else(|| PipelineError::Config(format!("unknown init region {}", c.init.region)))?;
        let mut init_box = region.as_box();
        init_box.lower.extend(&c.init.extra_lower);
        init_box.upper.extend(&c.init.extra_upper);
        if init_box.lower.len() != n || init_box.upper.len() != n {
            return bad(format!(
                "init region plus extra components must cover all {n} state components"
            ));
        }
        if init_box.lower.iter().zip(&init_box.upper).any(|(l, h)| l > h) {
            return bad("init box has lower > upper".into());
        }

        BarrierSet::new(
            c.safety.barriers.clone(),
            c.safety.alpha,
            c.safety.deviation_weights.clone(),
        )?;
        if c.safety.deviation_weights.len() != model.control_dim() {
            return bad("deviation_weights must match the control dimension".into());
        }
        if let Some(rd) = &c.safety.random_disks {
            if !(rd.radius[0] > 0.0 && rd.radius[0] <= rd.radius[1]) {
                return bad("random disk radius range must be positive and ordered".into());
            }
            for name in rd.keep_clear.iter().chain(&rd.keep_centers_clear) {
                if !c.regions.iter().any(|r| &r.name == name) {
                    return bad(format!("unknown region {name} in random_disks"));
                }
            }
        }
        if c.disturbance.kind == DisturbanceKind::UniformBox {
            DisturbanceSpec::uniform_box(c.disturbance.half_width.clone(), 0)?;
            if c.disturbance.half_width.len() != n {
                return bad("disturbance half_width must match the state dimension".into());
            }
        }
        c.optimizer.validate()?;
        c.training.validate()?;

        let mut hashed = config.clone();
        hashed.training = TrainConfig::default();
        let canonical = serde_json::to_string(&hashed)?;
        let hash = Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Self {
            model,
            table,
            formula,
            mpc,
            final_time,
            init_box,
            hash,
            config,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        Self::from_config(ScenarioConfig::from_toml(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Built-in scenario by name (`case1`, `case2`).
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "case1" => CASE1_TOML,
            "case2" => CASE2_TOML,
            _ => return None,
        };
        Some(Self::from_toml(text).expect("built-in scenario is valid"))
    }

    /// Loads `spec` as a built-in name or a file path.
    pub fn resolve(spec: &str) -> Result<Self, PipelineError> {
        match Self::builtin(spec) {
            Some(s) => Ok(s),
            None => Self::load(Path::new(spec)),
        }
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    /// SHA-256 of the canonical configuration.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    pub fn optimizer(&self) -> &OptimizerSettings {
        &self.config.optimizer
    }

    pub fn training(&self) -> &TrainConfig {
        &self.config.training
    }

    pub fn region(&self, name: &str) -> Option<&RegionConfig> {
        self.config.regions.iter().find(|r| r.name == name)
    }

    pub fn sample_initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.init_box
            .lower
            .iter()
            .zip(&self.init_box.upper)
            .map(|(l, h)| if l < h { rng.random_range(*l..*h) } else { *l })
            .collect()
    }

    /// Static barriers plus the randomized disks.
    pub fn sample_barriers(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Barrier<f64>>, PipelineError> {
        let mut out = self.config.safety.barriers.clone();
        let Some(rd) = &self.config.safety.random_disks else {
            return Ok(out);
        };
        let ws = &self.config.workspace;
        let clear: Vec<BoxConfig> = rd
            .keep_clear
            .iter()
            .filter_map(|n| self.region(n).map(RegionConfig::as_box))
            .collect();
        let centers: Vec<Vec<f64>> = rd
            .keep_centers_clear
            .iter()
            .filter_map(|n| self.region(n).map(|r| r.as_box().center()))
            .collect();
        let mut disks: Vec<Barrier<f64>> = Vec::with_capacity(rd.count);
        let mut attempts = 0;
        while disks.len() < rd.count {
            attempts += 1;
            if attempts > rd.max_attempts {
                return Err(PipelineError::Config(format!(
                    "could not place {} disks in {} attempts",
                    rd.count, rd.max_attempts
                )));
            }
            let c = [
                rng.random_range(ws.lower[0]..ws.upper[0]),
                rng.random_range(ws.lower[1]..ws.upper[1]),
            ];
            let r = if rd.radius[0] < rd.radius[1] {
                rng.random_range(rd.radius[0]..rd.radius[1])
            } else {
                rd.radius[0]
            };
            let hits_region = clear.iter().any(|b| b.distance_2d(c) <= r);
            let covers_center = centers
                .iter()
                .any(|p| (p[0] - c[0]).hypot(p[1] - c[1]) <= r);
            let hits_disk = disks.iter().any(|d| {
                (d.center[0] - c[0]).hypot(d.center[1] - c[1]) <= d.radius + r
            });
            if !(hits_region || covers_center || hits_disk) {
                disks.push(Barrier::avoid_disk(c, r));
            }
        }
        out.extend(disks);
        Ok(out)
    }

    pub fn barrier_set(&self, barriers: Vec<Barrier<f64>>) -> BarrierSet<f64> {
        BarrierSet {
            barriers,
            alpha: self.config.safety.alpha,
            deviation_weights: self.config.safety.deviation_weights.clone(),
        }
    }

    pub fn disturbance(&self, seed: u64) -> DisturbanceSpec<f64> {
        match self.config.disturbance.kind {
            DisturbanceKind::None => DisturbanceSpec::none(),
            DisturbanceKind::UniformBox => {
                DisturbanceSpec::uniform_box(self.config.disturbance.half_width.clone(), seed)
                    .expect("validated disturbance")
            }
        }
    }
}
