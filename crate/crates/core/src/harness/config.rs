use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::TransitionDataset;
use crate::dynamics::{rollout, Action, ModelParams, State, SystemSpec};
use crate::error::{Error, Result};
use crate::grid::ModelGrid;
use crate::learn::{Identifier, LearnConfig};
use crate::policy::{RewardSpec, Task};

/// Random-stream ids so each consumer of a run seed draws independently.
pub(crate) const GRID_STREAM: u64 = 1;
pub(crate) const DATA_STREAM: u64 = 2;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(deny_unknown_fields)]
pub enum GridChoice {
    Fixed {
        bounds: Vec<[f64; 2]>,
        resolution: Vec<usize>,
    },
    /// Grid centered on the truth with every coordinate scaled up or down by
    /// a random fraction drawn from `offset`, spanning `half_width` of the
    /// center on either side.
    AroundTruth {
        resolution: usize,
        offset: [f64; 2],
        half_width: f64,
    },
}

impl Default for GridChoice {
    fn default() -> Self {
        GridChoice::AroundTruth {
            resolution: 21,
            offset: [0.10, 0.15],
            half_width: 0.35,
        }
    }
}

impl GridChoice {
    pub fn validate(&self) -> Result<()> {
        match self {
            GridChoice::Fixed { bounds, resolution } => {
                ModelGrid::new(bounds.clone(), resolution.clone())
                    .map_err(|e| Error::config("grid", e.to_string()))?;
            }
            GridChoice::AroundTruth {
                resolution,
                offset,
                half_width,
            } => {
                if *resolution == 0 {
                    return Err(Error::config("grid.resolution", "must be at least 1"));
                }
                if !(offset[0] >= 0.0 && offset[0] <= offset[1] && offset[1] < 1.0) {
                    return Err(Error::config("grid.offset", "need 0 <= low <= high < 1"));
                }
                if !(*half_width > 0.0 && *half_width < 1.0) {
                    return Err(Error::config("grid.half_width", "must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    /// The grid for one run; the random offset comes from the run seed.
    pub fn build(&self, spec: &SystemSpec, truth: &ModelParams, seed: u64) -> Result<ModelGrid> {
        let grid = match self {
            GridChoice::Fixed { bounds, resolution } => ModelGrid::new(bounds.clone(), resolution.clone())?,
            GridChoice::AroundTruth {
                resolution,
                offset,
                half_width,
            } => {
                let mut rng = stream_rng(seed, GRID_STREAM);
                let bounds = truth
                    .iter()
                    .zip(&spec.param_bounds)
                    .map(|(t, [lo, hi])| {
                        let frac = if offset[0] < offset[1] {
                            rng.random_range(offset[0]..offset[1])
                        } else {
                            offset[0]
                        };
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        let c = t * (1.0 + sign * frac);
                        [(c * (1.0 - half_width)).max(*lo), (c * (1.0 + half_width)).min(*hi)]
                    })
                    .collect();
                ModelGrid::new(bounds, vec![*resolution; truth.len()])?
            }
        };
        grid.check_against(spec)?;
        Ok(grid)
    }
}

/// Excitation data from the true system: rollouts of uniformly random
/// actions from the task's start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub rollouts: usize,
    pub steps: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { rollouts: 5, steps: 50 }
    }
}

impl DataConfig {
    pub fn collect(&self, task: &Task, truth: &ModelParams, seed: u64) -> Result<TransitionDataset> {
        if self.rollouts == 0 || self.steps == 0 {
            return Err(Error::config("data", "need at least one rollout of one step"));
        }
        let mut rng = stream_rng(seed, DATA_STREAM);
        let mut data = TransitionDataset::default();
        let no_reward = RewardSpec::Constant { value: 0.0 };
        let bound = task.spec.action_bound;
        let dim = task.spec.action_dim();
        for _ in 0..self.rollouts {
            let actions: Vec<Action> = (0..self.steps)
                .map(|_| Action((0..dim).map(|_| rng.random_range(-bound..=bound)).collect()))
                .collect();
            let next = std::cell::Cell::new(0usize);
            let controller = |_: &SystemSpec, _: &State| {
                let i = next.get();
                next.set(i + 1);
                actions[i].clone()
            };
            let traj = rollout(&task.spec, &controller, &no_reward, truth, &task.start, self.steps)?;
            data.extend(traj.transitions);
        }
        Ok(data)
    }
}

/// Fixed identification budgets expressed as multiples of VGMI's mean
/// number of evaluated models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSweep {
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub truth: ModelParams,
    pub grid: GridChoice,
    pub data: DataConfig,
    pub learn: LearnConfig,
    pub methods: Vec<Identifier>,
    pub budget_sweep: Option<BudgetSweep>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::cart_pole_balance(),
            truth: ModelParams(vec![1.0, 0.1]),
            grid: GridChoice::default(),
            data: DataConfig::default(),
            learn: LearnConfig::default(),
            methods: vec![Identifier::Vgmi],
            budget_sweep: None,
            seeds: Vec::new(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task
            .validate()
            .map_err(|e| Error::config("task", e.to_string()))?;
        self.task
            .spec
            .check_params(&self.truth)
            .map_err(|e| Error::config("truth", e.to_string()))?;
        self.grid.validate()?;
        self.learn.validate()?;
        for (i, m) in self.methods.iter().enumerate() {
            m.validate()
                .map_err(|e| Error::config(format!("methods[{i}]"), e.to_string()))?;
        }
        let mut labels: Vec<String> = self.methods.iter().map(Identifier::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("methods", "duplicate method"));
        }
        if let Some(sweep) = &self.budget_sweep {
            if !self.methods.contains(&Identifier::Vgmi) {
                return Err(Error::config("budget_sweep", "needs the vgmi method"));
            }
            if sweep.multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                return Err(Error::config("budget_sweep.multipliers", "must be positive"));
            }
        }
        Ok(())
    }

    /// Parses and validates a config, reporting the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// [`Self::from_json`] after applying `dotted.path=value` overrides, where
    /// the value is JSON or else a plain string.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: Value = serde_json::from_str(text).map_err(|e| Error::config("", e.to_string()))?;
        for item in overrides {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::config(item.as_str(), "override must look like path=value"))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, path, value)?;
        }
        Self::from_json(&tree.to_string())
    }
}

fn set_path(tree: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(path, format!("`{part}` is not an array index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(path, format!("index {idx} out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::config(path, format!("`{part}` is not inside an object"))),
        };
    }
    Err(Error::config(path, "empty override path"))
}
