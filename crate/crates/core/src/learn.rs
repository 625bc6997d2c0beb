//! The outer learning loop: execute the policy on the real system, identify
//! the model from all transitions so far, improve the policy in simulation
//! under the identified model, repeat.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{identify_cma_es, identify_least_squares, EntropySearch, LeastSquaresOptions};
use crate::belief::BeliefDistribution;
use crate::data::TransitionDataset;
use crate::dynamics::{rollout, ModelParams};
use crate::error::{Error, Result};
use crate::grid::ModelGrid;
use crate::objective::{BudgetSpec, SimulationError};
use crate::policy::{policy_update, policy_value, Policy, PolicySearchConfig, Task};
use crate::vgmi::{identify_with, GreedyEntropy, IdentifyOutcome, LoopOptions, StopContext, StopReason, VgmiConfig};

/// How the model is identified in every outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
#[serde(deny_unknown_fields)]
pub enum Identifier {
    /// Value-guided identification.
    Vgmi,
    /// The VGMI loop without value-guided stopping, run for exactly `models` models.
    FixedBudget { models: usize },
    EntropySearch(EntropySearch),
    CmaEs {
        evaluations: usize,
    },
    LeastSquares {
        evaluations: usize,
        #[serde(default)]
        options: LeastSquaresOptions,
    },
    /// The ground-truth model, without identification.
    Truth,
}

impl Identifier {
    pub fn label(&self) -> String {
        match self {
            Identifier::Vgmi => "vgmi".into(),
            Identifier::FixedBudget { models } => format!("fixed-{models}"),
            Identifier::EntropySearch(_) => "entropy-search".into(),
            Identifier::CmaEs { evaluations } => format!("cma-es-{evaluations}"),
            Identifier::LeastSquares { evaluations, .. } => format!("least-squares-{evaluations}"),
            Identifier::Truth => "truth".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Identifier::FixedBudget { models: 0 } => Err(Error::config("method.models", "must be at least 1")),
            Identifier::CmaEs { evaluations: 0 } | Identifier::LeastSquares { evaluations: 0, .. } => {
                Err(Error::config("method.evaluations", "must be at least 1"))
            }
            Identifier::EntropySearch(es) if es.outcomes == 0 || es.inner_samples == 0 => Err(Error::config(
                "method",
                "entropy search needs at least one outcome and one inner sample",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub vgmi: VgmiConfig,
    pub policy_search: PolicySearchConfig,
    pub outer_iterations: usize,
    /// Real-system steps executed per outer iteration.
    pub rollout_horizon: usize,
    /// Policy updates under the identified model per outer iteration.
    pub updates_per_iteration: usize,
    /// Identify from only the latest transitions instead of all history.
    pub window: Option<usize>,
    /// Total simulated steps allowed for identification plus policy search.
    pub total_budget: Option<u64>,
    pub initial_weights: Option<Vec<f64>>,
    pub initial_variance: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            vgmi: VgmiConfig::default(),
            policy_search: PolicySearchConfig::default(),
            outer_iterations: 10,
            rollout_horizon: 10,
            updates_per_iteration: 1,
            window: None,
            total_budget: None,
            initial_weights: None,
            initial_variance: 25.0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        self.vgmi.validate()?;
        self.policy_search.validate()?;
        if self.outer_iterations == 0 {
            return Err(Error::config("learn.outer_iterations", "must be at least 1"));
        }
        if self.rollout_horizon == 0 {
            return Err(Error::config("learn.rollout_horizon", "must be at least 1"));
        }
        if self.updates_per_iteration == 0 {
            return Err(Error::config("learn.updates_per_iteration", "must be at least 1"));
        }
        if self.window == Some(0) {
            return Err(Error::config("learn.window", "must be at least 1"));
        }
        if !(self.initial_variance > 0.0 && self.initial_variance.is_finite()) {
            return Err(Error::config("learn.initial_variance", "must be positive"));
        }
        Ok(())
    }

    pub fn initial_policy(&self, task: &Task) -> Result<Policy> {
        let n = Policy::weight_count(&task.spec);
        let weights = self.initial_weights.clone().unwrap_or_else(|| vec![0.0; n]);
        Policy::new(&task.spec, weights, vec![self.initial_variance; n])
            .map_err(|e| Error::config("learn.initial_weights", e.to_string()))
    }
}

/// One outer iteration of the learning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Cumulative simulated steps spent on identification and policy search.
    pub cost: u64,
    pub identification_cost: u64,
    pub policy_cost: u64,
    pub transitions: usize,
    /// Value of the new mean policy on the ground-truth system.
    pub real_reward: f64,
    /// Value of the new mean policy under the identified model.
    pub sim_reward: f64,
    /// Reward collected by the exploratory execution on the real system.
    pub execution_reward: f64,
    /// KL between the search distributions before and after this iteration's updates.
    pub kl: f64,
    /// Models evaluated by the identifier (grid models for VGMI-style loops,
    /// objective evaluations otherwise).
    pub stop_k: usize,
    pub objective_evaluations: usize,
    /// Simulation error of the identified model on the identification data.
    pub identification_error: f64,
    /// Relative distance of the identified model from the truth.
    pub param_error: f64,
    pub entropy: Option<f64>,
    pub weighted_deviation: Option<f64>,
    pub epsilon: Option<f64>,
    pub value_consensus: bool,
    pub theta: ModelParams,
    pub weights: Vec<f64>,
    pub exploration: Vec<f64>,
    pub identification_s: f64,
    pub policy_s: f64,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub records: Vec<OuterRecord>,
    pub policy: Policy,
    pub belief: Option<BeliefDistribution>,
    pub dataset: TransitionDataset,
}

struct Identified {
    theta: ModelParams,
    error: f64,
    belief: Option<BeliefDistribution>,
    stop_k: usize,
    objective_evaluations: usize,
    value_rollouts: usize,
    entropy: Option<f64>,
    weighted_deviation: Option<f64>,
    epsilon: Option<f64>,
    value_consensus: bool,
}

impl Identified {
    fn from_loop(out: IdentifyOutcome) -> Self {
        let error = out
            .log
            .entries
            .iter()
            .filter(|e| e.theta == out.map_theta)
            .map(|e| e.error)
            .fold(f64::INFINITY, f64::min);
        let last = out.iterations.last();
        Self {
            error,
            stop_k: out.log.len(),
            objective_evaluations: out.objective_evaluations,
            value_rollouts: out.value_rollouts,
            entropy: last.map(|r| r.entropy),
            weighted_deviation: last.and_then(|r| r.stop.weighted_deviation),
            epsilon: last.and_then(|r| r.stop.epsilon),
            value_consensus: out.stop_reason == StopReason::ValueConsensus,
            theta: out.map_theta,
            belief: Some(out.belief),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_identifier(
    identifier: &Identifier,
    data: &TransitionDataset,
    grid: &ModelGrid,
    task: &Task,
    truth: &ModelParams,
    cfg: &VgmiConfig,
    reference: &Policy,
    prior: Option<&BeliefDistribution>,
) -> Result<Identified> {
    let objective = SimulationError::new(data, &task.spec)?;
    let bounds = grid.bounds();
    let best_of = |theta: Vec<f64>, error: f64, evaluations: usize| Identified {
        theta: ModelParams(theta),
        error,
        belief: None,
        stop_k: evaluations,
        objective_evaluations: evaluations,
        value_rollouts: 0,
        entropy: None,
        weighted_deviation: None,
        epsilon: None,
        value_consensus: false,
    };
    let mut id = match identifier {
        Identifier::Vgmi => {
            let options = LoopOptions {
                stopping: Some(StopContext {
                    policy: reference,
                    task,
                }),
                prior,
                ..Default::default()
            };
            Identified::from_loop(identify_with(&objective, grid, cfg, &GreedyEntropy, options)?)
        }
        Identifier::FixedBudget { models } => {
            let fixed = VgmiConfig {
                k_min: *models,
                k_max: *models,
                ..cfg.clone()
            };
            let options = LoopOptions {
                prior,
                ..Default::default()
            };
            Identified::from_loop(identify_with(&objective, grid, &fixed, &GreedyEntropy, options)?)
        }
        Identifier::EntropySearch(es) => {
            let options = LoopOptions {
                prior,
                ..Default::default()
            };
            Identified::from_loop(identify_with(&objective, grid, cfg, es, options)?)
        }
        Identifier::CmaEs { evaluations } => {
            let r = identify_cma_es(&objective, bounds, BudgetSpec::evaluations(*evaluations), cfg.seed)?;
            best_of(r.theta.into_inner(), r.error, r.trace.len())
        }
        Identifier::LeastSquares { evaluations, options } => {
            let r = identify_least_squares(
                &objective,
                bounds,
                BudgetSpec::evaluations(*evaluations),
                options,
                cfg.seed,
            )?;
            best_of(r.theta.into_inner(), r.error, r.trace.len())
        }
        Identifier::Truth => {
            let error = objective.error(truth)?;
            best_of(truth.to_vec(), error, 0)
        }
    };
    if !id.error.is_finite() {
        // the MAP cell may not have been evaluated yet
        id.error = objective.error(&id.theta).unwrap_or(f64::INFINITY);
    }
    Ok(id)
}

fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Runs the outer learning loop with `truth` standing in for the real system.
///
/// Each iteration executes a policy sampled from the exploration Gaussian for
/// `rollout_horizon` steps on the truth from the task's start state, identifies
/// the model from the accumulated transitions with the current policy as the
/// reference, and applies `updates_per_iteration` KL-bounded updates under the
/// identified model. The belief of one identification warm-starts the next.
///
/// With `total_budget` set, the loop also ends once the simulated-step cost is
/// spent; the check happens before each identification and each update.
pub fn run_main_loop(
    task: &Task,
    grid: &ModelGrid,
    truth: &ModelParams,
    identifier: &Identifier,
    cfg: &LearnConfig,
    seed: u64,
) -> Result<LearnOutcome> {
    task.validate()?;
    cfg.validate()?;
    identifier.validate()?;
    grid.check_against(&task.spec)?;
    task.spec.check_params(truth)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = cfg.initial_policy(task)?;
    let mut dataset = TransitionDataset::default();
    let mut belief: Option<BeliefDistribution> = None;
    let mut records = Vec::new();
    let mut cost = 0u64;
    let budget_left = |cost: u64| cfg.total_budget.is_none_or(|b| cost < b);
    let horizon = task.horizon as u64;

    for iteration in 0..cfg.outer_iterations {
        if !budget_left(cost) {
            break;
        }
        let exec_seed: u64 = rng.random();
        let ident_seed: u64 = rng.random();
        let update_seed: u64 = rng.random();

        let mut exec_rng = ChaCha8Rng::seed_from_u64(exec_seed);
        let executed = policy.sample(&mut exec_rng);
        let traj = rollout(&task.spec, &executed, &task.reward, truth, &task.start, cfg.rollout_horizon)?;
        dataset.extend(traj.transitions);
        let ident_data = match cfg.window {
            Some(w) => dataset.latest(w),
            None => dataset.clone(),
        };

        let started = Instant::now();
        let vgmi_cfg = VgmiConfig {
            seed: ident_seed,
            ..cfg.vgmi.clone()
        };
        let id = run_identifier(identifier, &ident_data, grid, task, truth, &vgmi_cfg, &policy, belief.as_ref())?;
        let identification_s = started.elapsed().as_secs_f64();
        let identification_cost = id.objective_evaluations as u64 * ident_data.len() as u64 + id.value_rollouts as u64 * horizon;
        cost += identification_cost;

        let started = Instant::now();
        let previous = policy.clone();
        let mut update_rng = ChaCha8Rng::seed_from_u64(update_seed);
        let mut policy_cost = 0u64;
        let mut sim_reward = None;
        for _ in 0..cfg.updates_per_iteration {
            if !budget_left(cost) {
                break;
            }
            let up = policy_update(&policy, &id.theta, task, &cfg.policy_search, update_rng.random())?;
            policy_cost += up.rollouts as u64 * horizon;
            cost += up.rollouts as u64 * horizon;
            sim_reward = Some(up.value_after);
            policy = up.policy;
        }
        let policy_s = started.elapsed().as_secs_f64();
        let sim_reward = match sim_reward {
            Some(v) => v,
            None => policy_value(&policy, &id.theta, task)?.value,
        };
        let real_reward = policy_value(&policy, truth, task)?.value;
        let kl = crate::policy::gaussian_kl(
            &policy.weights,
            &policy.exploration,
            &previous.weights,
            &previous.exploration,
        );

        records.push(OuterRecord {
            iteration,
            cost,
            identification_cost,
            policy_cost,
            transitions: dataset.len(),
            real_reward,
            sim_reward,
            execution_reward: traj.total_reward,
            kl,
            stop_k: id.stop_k,
            objective_evaluations: id.objective_evaluations,
            identification_error: id.error,
            param_error: relative_distance(&id.theta, truth),
            entropy: id.entropy,
            weighted_deviation: id.weighted_deviation,
            epsilon: id.epsilon,
            value_consensus: id.value_consensus,
            theta: id.theta,
            weights: policy.weights.clone(),
            exploration: policy.exploration.clone(),
            identification_s,
            policy_s,
        });
        if id.belief.is_some() {
            belief = id.belief;
        }
    }

    Ok(LearnOutcome {
        records,
        policy,
        belief,
        dataset,
    })
}
