//! Value-guided model identification.
//!
//! Each iteration evaluates the simulation error of one model, refits the GP
//! surrogate, re-estimates the belief over the minimizing grid point, picks
//! the next model by its entropy contribution (refined locally inside its
//! grid cell before simulation), and stops once every high-probability model
//! predicts nearly the same value for the reference policy.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{estimate_from_sampler, select_index, BeliefDistribution};
use crate::data::TransitionDataset;
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::gp::{optimize_hyperparameters, GpModel, GridSampler, Hyperparameters, Kernel};
use crate::grid::ModelGrid;
use crate::objective::{BudgetSpec, Objective, SimulationError, Tracker};
use crate::optimize::QuasiNewton;
use crate::policy::{policy_value, Policy, Task};

/// Lower bound on the surrogate's lengthscales, in grid spacings.
pub const MIN_LENGTHSCALE_CELLS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct VgmiConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Probability a model needs to take part in the stopping test.
    pub eta: f64,
    /// Value-error threshold. When absent, `0.05 * |V(θ*)|` floored at 1.
    pub epsilon: Option<f64>,
    /// Probability the models passing `eta` must hold together before their
    /// agreement counts; a diffuse belief otherwise stops vacuously.
    pub min_checked_mass: f64,
    /// GP function samples per belief estimate.
    pub n_mc: usize,
    pub seed: u64,
    /// Refit kernel hyperparameters after this many new evaluations.
    pub refit_every: usize,
    /// Observation noise relative to the target variance; the lower end of
    /// the range searched when hyperparameters are refit.
    pub noise: f64,
    /// Upper end of the noise range searched at refits. Equal to `noise`
    /// keeps the noise fixed.
    pub max_noise: f64,
    pub refine: bool,
    /// Quasi-Newton iterations allowed per local refinement.
    pub refine_iterations: usize,
    /// Objective evaluations spent refining the final MAP model inside its
    /// cell. Under an evaluation budget they are held back from the search.
    pub final_refine: usize,
}

impl Default for VgmiConfig {
    fn default() -> Self {
        Self {
            k_min: 5,
            k_max: 50,
            eta: 0.05,
            epsilon: None,
            min_checked_mass: 0.5,
            n_mc: 1000,
            seed: 0,
            refit_every: 5,
            noise: 1e-6,
            max_noise: 0.05,
            refine: true,
            refine_iterations: 20,
            final_refine: 0,
        }
    }
}

impl VgmiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::config("vgmi.k_min", "need 1 <= k_min <= k_max"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config("vgmi.eta", "must lie in (0, 1)"));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::config("vgmi.epsilon", "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.min_checked_mass) {
            return Err(Error::config("vgmi.min_checked_mass", "must lie in [0, 1]"));
        }
        if self.n_mc == 0 {
            return Err(Error::config("vgmi.n_mc", "must be at least 1"));
        }
        if self.refit_every == 0 {
            return Err(Error::config("vgmi.refit_every", "must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("vgmi.noise", "must be nonnegative"));
        }
        if !(self.max_noise >= self.noise && self.max_noise.is_finite()) {
            return Err(Error::config("vgmi.max_noise", "must be finite and at least `noise`"));
        }
        Ok(())
    }

    /// Threshold used against the weighted value deviation.
    pub fn epsilon_for(&self, map_value: f64) -> f64 {
        self.epsilon.unwrap_or_else(|| (0.05 * map_value.abs()).max(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub theta: ModelParams,
    pub error: f64,
    /// Grid cell the evaluation was refined within.
    pub cell: usize,
}

/// Evaluated models in order, one per iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationLog {
    pub entries: Vec<Evaluation>,
}

impl EvaluationLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCheck {
    pub decision: Decision,
    pub map_index: usize,
    pub map_theta: ModelParams,
    /// `Σ P(θ)|V(θ) - V(θ*)|` over models with `P(θ) >= η`; absent below `k_min`.
    pub weighted_deviation: Option<f64>,
    pub epsilon: Option<f64>,
    pub map_value: Option<f64>,
    pub models_checked: usize,
}

/// Value-guided stopping test after `k` completed evaluations.
///
/// `map_theta` overrides the grid point used for `V(θ*)`, e.g. with the
/// refined model of the MAP cell.
pub fn check_stop(
    belief: &BeliefDistribution,
    pi: &Policy,
    grid: &ModelGrid,
    task: &Task,
    cfg: &VgmiConfig,
    k: usize,
    map_theta: Option<&ModelParams>,
) -> Result<StopCheck> {
    if belief.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            what: "belief",
            expected: grid.len(),
            found: belief.len(),
        });
    }
    let map_index = belief.argmax();
    let map_theta = map_theta.cloned().unwrap_or_else(|| grid.point(map_index).clone());
    if k < cfg.k_min {
        return Ok(StopCheck {
            decision: Decision::Continue,
            map_index,
            map_theta,
            weighted_deviation: None,
            epsilon: None,
            map_value: None,
            models_checked: 0,
        });
    }
    let map_value = policy_value(pi, &map_theta, task)?.value;
    let mut deviation = 0.0;
    let mut checked = 0;
    let mut checked_mass = 0.0;
    for (i, &p) in belief.probabilities().iter().enumerate() {
        if p >= cfg.eta {
            let v = policy_value(pi, grid.point(i), task)?.value;
            deviation += p * (v - map_value).abs();
            checked += 1;
            checked_mass += p;
        }
    }
    let epsilon = cfg.epsilon_for(map_value);
    let decision = if k >= cfg.k_max || (deviation <= epsilon && checked_mass >= cfg.min_checked_mass) {
        Decision::Stop
    } else {
        Decision::Continue
    };
    Ok(StopCheck {
        decision,
        map_index,
        map_theta,
        weighted_deviation: Some(deviation),
        epsilon: Some(epsilon),
        map_value: Some(map_value),
        models_checked: checked + 1,
    })
}

fn refiner(grid: &ModelGrid, max_iterations: usize) -> QuasiNewton {
    let mut qn = QuasiNewton::new(grid.spacing().iter().map(|s| 1e-4 * s).collect());
    qn.max_iterations = max_iterations;
    qn.gradient_tolerance = 0.0;
    // from the grid point a full step reaches the cell boundary
    qn.initial_step = 0.5;
    qn
}

/// Quasi-Newton refinement of a grid candidate within its cell. Never
/// returns a point worse than `candidate`; on numerical failure the
/// candidate itself comes back.
pub fn local_refine_with<F>(
    candidate: &ModelParams,
    candidate_error: f64,
    cell: &[[f64; 2]],
    grid: &ModelGrid,
    max_iterations: usize,
    mut f: F,
) -> (ModelParams, f64)
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let qn = refiner(grid, max_iterations);
    // the candidate's error is already known
    let mut known = Some(candidate_error);
    let f = |x: &[f64]| match known.take() {
        Some(e) if x == candidate.0.as_slice() => Some(e),
        _ => f(x),
    };
    match qn.minimize(f, candidate, cell) {
        Some(m) if m.value.is_finite() && m.value <= candidate_error => (ModelParams(m.x), m.value),
        _ => (candidate.clone(), candidate_error),
    }
}

pub fn local_refine(
    candidate: &ModelParams,
    data: &TransitionDataset,
    grid: &ModelGrid,
    spec: &crate::dynamics::SystemSpec,
) -> Result<ModelParams> {
    let objective = SimulationError::new(data, spec)?;
    let cell = grid
        .cell_of(candidate)
        .ok_or_else(|| Error::config("candidate", "not inside the grid"))?;
    let e0 = objective.evaluate(candidate);
    let (theta, _) = local_refine_with(
        candidate,
        e0,
        &grid.cell_bounds(cell),
        grid,
        VgmiConfig::default().refine_iterations,
        |x| Some(objective.evaluate(x)),
    );
    Ok(theta)
}

/// Everything an acquisition rule may look at.
pub struct AcquisitionContext<'a> {
    pub grid: &'a ModelGrid,
    pub gp: &'a GpModel,
    pub sampler: &'a GridSampler,
    pub belief: &'a BeliefDistribution,
    /// Grid points already evaluated.
    pub evaluated: &'a [bool],
}

pub trait Acquisition {
    fn select(&self, ctx: &AcquisitionContext<'_>, seed: u64) -> usize;
}

/// Greedy entropy acquisition: the unevaluated grid point with the largest
/// `-P ln P`. Falls back to evaluated points only when no unevaluated point
/// contributes.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyEntropy;

impl Acquisition for GreedyEntropy {
    fn select(&self, ctx: &AcquisitionContext<'_>, _seed: u64) -> usize {
        let fresh = select_index(ctx.belief, |i| !ctx.evaluated[i]);
        match fresh {
            Some(i) if ctx.belief.probabilities()[i] > 0.0 => i,
            Some(_) => below_best_score(ctx.sampler, ctx.evaluated),
            None => select_index(ctx.belief, |_| true).expect("grid is non-empty"),
        }
    }
}

/// Tie-break for a belief that puts no Monte Carlo mass on any unevaluated
/// point: the unevaluated point whose posterior marginal is most likely to
/// fall below the lowest posterior mean, i.e. the largest
/// `(min m - m(θ)) / σ(θ)`. Lowest index wins ties.
fn below_best_score(sampler: &GridSampler, evaluated: &[bool]) -> usize {
    let best_mean = sampler.mean.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in sampler.mean.iter().enumerate() {
        if evaluated[i] {
            continue;
        }
        let sd = sampler.cov[(i, i)].max(0.0).sqrt();
        let z = if sd > 0.0 { (best_mean - m) / sd } else { f64::NEG_INFINITY };
        if best.is_none_or(|(_, b)| z > b) {
            best = Some((i, z));
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub theta: ModelParams,
    pub error: f64,
    pub entropy: f64,
    pub map_index: usize,
    pub stop: StopCheck,
    /// Wall-clock from posterior sampling on the grid to the chosen model (s),
    /// belief estimate included.
    pub acquisition_s: f64,
    /// Objective evaluations so far, refinement included.
    pub objective_evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ValueConsensus,
    MaxEvaluations,
    Budget,
    EntropyTarget,
}

#[derive(Debug, Clone)]
pub struct IdentifyOutcome {
    pub belief: BeliefDistribution,
    pub log: EvaluationLog,
    pub map_index: usize,
    /// Refined model of the MAP cell when one exists, else its grid point.
    pub map_theta: ModelParams,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub objective_evaluations: usize,
    /// Rollouts simulated by stopping checks.
    pub value_rollouts: usize,
    pub kernel: Kernel,
    pub noise: f64,
}

impl IdentifyOutcome {
    pub fn final_check(&self) -> Option<&StopCheck> {
        self.iterations.last().map(|r| &r.stop)
    }
}

/// Reference policy and task for value-guided stopping.
#[derive(Clone, Copy)]
pub struct StopContext<'a> {
    pub policy: &'a Policy,
    pub task: &'a Task,
}

/// Options of the identification loop beyond [`VgmiConfig`].
#[derive(Clone, Copy, Default)]
pub struct LoopOptions<'a> {
    /// Value-guided stopping; without it the loop runs to `k_max`.
    pub stopping: Option<StopContext<'a>>,
    /// Belief to draw the first model from instead of the uniform one.
    pub prior: Option<&'a BeliefDistribution>,
    /// Cap on raw objective evaluations.
    pub budget: Option<BudgetSpec>,
    /// Stop once the belief's entropy (nats) falls to this level.
    pub entropy_target: Option<f64>,
}

/// Identification loop with a pluggable objective and acquisition rule.
pub fn identify_with<O, A>(
    objective: &O,
    grid: &ModelGrid,
    cfg: &VgmiConfig,
    acquisition: &A,
    options: LoopOptions<'_>,
) -> Result<IdentifyOutcome>
where
    O: Objective + ?Sized,
    A: Acquisition + ?Sized,
{
    cfg.validate()?;
    if objective.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            what: "grid dimension",
            expected: objective.dim(),
            found: grid.dim(),
        });
    }
    if let Some(prior) = options.prior {
        if prior.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "prior belief",
                expected: grid.len(),
                found: prior.len(),
            });
        }
    }
    let budget = options.budget.unwrap_or(BudgetSpec {
        max_evaluations: None,
        max_seconds: Some(f64::MAX),
    });
    let tracker = Tracker::new(objective, budget);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spacing = grid.spacing();
    let extent = grid.extent();
    // sub-cell structure is left to the local refinement
    let min_lengthscales: Vec<f64> = spacing.iter().map(|s| MIN_LENGTHSCALE_CELLS * s).collect();

    let mut candidate = match options.prior {
        Some(prior) => prior.sample(&mut rng),
        None => rng.random_range(0..grid.len()),
    };

    let mut inputs: Vec<ModelParams> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut evaluated = vec![false; grid.len()];
    let mut best_in_cell: Vec<Option<(ModelParams, f64)>> = vec![None; grid.len()];
    let mut log = EvaluationLog::default();
    let mut iterations = Vec::new();
    let mut hyper = Hyperparameters {
        kernel: Kernel::default_for(grid),
        noise: cfg.noise,
    };
    let mut since_refit = 0usize;
    let mut value_rollouts = 0usize;
    let mut last: Option<(BeliefDistribution, usize, ModelParams, StopReason)> = None;

    // row of each evaluated cell in the surrogate's training set
    let mut row_of: Vec<Option<usize>> = vec![None; grid.len()];

    let mut stopped = false;
    let reserve_reached = || {
        budget
            .max_evaluations
            .is_some_and(|max| tracker.evaluations() + cfg.final_refine >= max)
    };
    for k in 1..=cfg.k_max {
        if k > 1 && cfg.final_refine > 0 && reserve_reached() {
            break;
        }
        // Evaluate the candidate grid point, then refine it inside its cell.
        let point = grid.point(candidate).clone();
        let Some(e_point) = tracker.evaluate(&point) else {
            break;
        };
        evaluated[candidate] = true;
        let (theta, error) = if cfg.refine && e_point.is_finite() {
            local_refine_with(
                &point,
                e_point,
                &grid.cell_bounds(candidate),
                grid,
                cfg.refine_iterations,
                |x| tracker.evaluate(x),
            )
        } else {
            (point.clone(), e_point)
        };
        if best_in_cell[candidate].as_ref().is_none_or(|(_, e)| error < *e) {
            best_in_cell[candidate] = Some((theta.clone(), error));
        }
        log.entries.push(Evaluation {
            theta: theta.clone(),
            error,
            cell: candidate,
        });
        // The surrogate sees each evaluated cell at its grid point, valued
        // at the lowest error found inside the cell.
        if let Some((_, cell_error)) = best_in_cell[candidate].as_ref().filter(|(_, e)| e.is_finite()) {
            match row_of[candidate] {
                Some(row) => targets[row] = *cell_error,
                None => {
                    row_of[candidate] = Some(inputs.len());
                    inputs.push(point.clone());
                    targets.push(*cell_error);
                    since_refit += 1;
                }
            }
        }

        if inputs.is_empty() {
            return Err(Error::NonFinite("simulation error at every evaluated model"));
        }
        if since_refit >= cfg.refit_every && inputs.len() >= 3 {
            hyper = optimize_hyperparameters(
                &inputs,
                &targets,
                &hyper,
                [cfg.noise, cfg.max_noise],
                &extent,
                &min_lengthscales,
            );
            since_refit = 0;
        }
        let gp = GpModel::fit(&inputs, &targets, hyper.kernel.clone(), hyper.noise)?;
        let started = Instant::now();
        let sampler = gp.grid_sampler(grid)?;
        let mc_seed: u64 = rng.random();
        let belief = estimate_from_sampler(&sampler, cfg.n_mc, mc_seed)?;
        let entropy = belief.entropy();

        let map_index = belief.argmax();
        let map_theta = best_in_cell[map_index]
            .as_ref()
            .map(|(t, _)| t.clone())
            .unwrap_or_else(|| grid.point(map_index).clone());

        let acq_seed: u64 = rng.random();
        let next = acquisition.select(
            &AcquisitionContext {
                grid,
                gp: &gp,
                sampler: &sampler,
                belief: &belief,
                evaluated: &evaluated,
            },
            acq_seed,
        );
        let acquisition_s = started.elapsed().as_secs_f64();

        let stop = match options.stopping {
            Some(ctx) => {
                let check = check_stop(&belief, ctx.policy, grid, ctx.task, cfg, k, Some(&map_theta))?;
                value_rollouts += if check.weighted_deviation.is_some() {
                    check.models_checked
                } else {
                    0
                };
                check
            }
            None => StopCheck {
                decision: if k >= cfg.k_max { Decision::Stop } else { Decision::Continue },
                map_index,
                map_theta: map_theta.clone(),
                weighted_deviation: None,
                epsilon: None,
                map_value: None,
                models_checked: 0,
            },
        };
        let concentrated = options.entropy_target.is_some_and(|t| entropy <= t);
        let decision = if concentrated { Decision::Stop } else { stop.decision };
        iterations.push(IterationRecord {
            k,
            theta,
            error,
            entropy,
            map_index,
            stop,
            acquisition_s,
            objective_evaluations: tracker.evaluations(),
        });
        let reason = if k >= cfg.k_max {
            StopReason::MaxEvaluations
        } else if concentrated {
            StopReason::EntropyTarget
        } else {
            StopReason::ValueConsensus
        };
        last = Some((belief, map_index, map_theta, reason));
        if decision == Decision::Stop {
            stopped = true;
            break;
        }
        candidate = next;
    }

    let Some((belief, map_index, mut map_theta, mut stop_reason)) = last else {
        return Err(Error::config("budget", "exhausted before the first model was evaluated"));
    };
    if cfg.final_refine > 0 {
        let (start, start_error) = best_in_cell[map_index]
            .clone()
            .unwrap_or_else(|| (grid.point(map_index).clone(), f64::INFINITY));
        let mut left = cfg.final_refine;
        let start_error = if start_error.is_finite() {
            start_error
        } else {
            left -= 1;
            tracker.evaluate(&start).unwrap_or(f64::INFINITY)
        };
        if start_error.is_finite() {
            let (theta, error) = local_refine_with(
                &start,
                start_error,
                &grid.cell_bounds(map_index),
                grid,
                usize::MAX,
                |x| {
                    if left == 0 {
                        return None;
                    }
                    left -= 1;
                    tracker.evaluate(x)
                },
            );
            log.entries.push(Evaluation {
                theta: theta.clone(),
                error,
                cell: map_index,
            });
            map_theta = theta;
        }
    }
    if !stopped {
        stop_reason = StopReason::Budget;
    }
    Ok(IdentifyOutcome {
        belief,
        log,
        map_index,
        map_theta,
        iterations,
        stop_reason,
        objective_evaluations: tracker.evaluations(),
        value_rollouts,
        kernel: hyper.kernel,
        noise: hyper.noise,
    })
}

/// Value-guided identification on a transition dataset with greedy entropy
/// acquisition and `pi` as reference policy.
pub fn identify(
    data: &TransitionDataset,
    grid: &ModelGrid,
    pi: &Policy,
    task: &Task,
    cfg: &VgmiConfig,
) -> Result<IdentifyOutcome> {
    identify_from(data, grid, pi, task, cfg, None)
}

/// [`identify`] with an optional warm-start belief for the first model.
pub fn identify_from(
    data: &TransitionDataset,
    grid: &ModelGrid,
    pi: &Policy,
    task: &Task,
    cfg: &VgmiConfig,
    prior: Option<&BeliefDistribution>,
) -> Result<IdentifyOutcome> {
    grid.check_against(&task.spec)?;
    let objective = SimulationError::new(data, &task.spec)?;
    identify_with(
        &objective,
        grid,
        cfg,
        &GreedyEntropy,
        LoopOptions {
            stopping: Some(StopContext { policy: pi, task }),
            prior,
            ..Default::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::FnObjective;

    fn bowl_grid() -> ModelGrid {
        ModelGrid::new(vec![[0.0, 1.0], [0.0, 1.0]], vec![9, 9]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(VgmiConfig::default().validate().is_ok());
        let bad = VgmiConfig {
            k_min: 10,
            k_max: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = VgmiConfig {
            eta: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(VgmiConfig::default().epsilon_for(-10.0), 1.0);
        assert_eq!(VgmiConfig::default().epsilon_for(100.0), 5.0);
    }

    #[test]
    fn single_evaluation_cap() {
        let grid = bowl_grid();
        let f = FnObjective::new(2, |x: &[f64]| (x[0] - 0.4).powi(2) + (x[1] - 0.6).powi(2));
        let cfg = VgmiConfig {
            k_min: 1,
            k_max: 1,
            n_mc: 200,
            ..Default::default()
        };
        let out = identify_with(&f, &grid, &cfg, &GreedyEntropy, LoopOptions::default()).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.stop_reason, StopReason::MaxEvaluations);
    }

    #[test]
    fn exhaustive_budget_finds_global_minimum() {
        let grid = ModelGrid::new(vec![[0.0, 1.0], [0.0, 1.0]], vec![5, 5]).unwrap();
        let target = grid.point(17).clone();
        let f = FnObjective::new(2, move |x: &[f64]| ((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)).sqrt());
        let cfg = VgmiConfig {
            k_min: 1,
            k_max: grid.len(),
            n_mc: 300,
            refine: false,
            ..Default::default()
        };
        let out = identify_with(&f, &grid, &cfg, &GreedyEntropy, LoopOptions::default()).unwrap();
        assert_eq!(out.map_index, 17);
        // no grid point is evaluated twice
        let mut cells: Vec<usize> = out.log.entries.iter().map(|e| e.cell).collect();
        cells.sort_unstable();
        cells.dedup();
        assert_eq!(cells.len(), out.log.len());
    }

    #[test]
    fn budget_caps_objective_calls() {
        let grid = bowl_grid();
        let f = FnObjective::new(2, |x: &[f64]| (x[0] - 0.4).abs() + (x[1] - 0.6).abs());
        let cfg = VgmiConfig {
            k_min: 1,
            k_max: 30,
            n_mc: 100,
            ..Default::default()
        };
        let out = identify_with(
            &f,
            &grid,
            &cfg,
            &GreedyEntropy,
            LoopOptions {
                budget: Some(BudgetSpec::evaluations(25)),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.objective_evaluations <= 25);
        assert_eq!(out.stop_reason, StopReason::Budget);
    }

    #[test]
    fn refinement_stays_in_cell_and_never_worsens() {
        let grid = bowl_grid();
        let f = |x: &[f64]| (x[0] - 0.43).powi(2) + 3.0 * (x[1] - 0.71).powi(2);
        for i in 0..grid.len() {
            let c = grid.point(i).clone();
            let cell = grid.cell_bounds(i);
            let e0 = f(&c);
            let (r, e) = local_refine_with(&c, e0, &cell, &grid, 20, |x| Some(f(x)));
            assert!(e <= e0 && (f(&r) - e).abs() < 1e-15);
            for (v, [lo, hi]) in r.iter().zip(&cell) {
                assert!(v >= lo && v <= hi);
            }
        }
    }

    fn balance_setup() -> (Task, Policy, ModelGrid) {
        let task = Task::cart_pole_balance();
        let pi = Policy::new(&task.spec, vec![3.0, 5.5, -45.0, -10.0, 0.0], vec![1.0; 5]).unwrap();
        let grid = ModelGrid::new(vec![[0.7, 1.3], [0.05, 0.15]], vec![3, 3]).unwrap();
        (task, pi, grid)
    }

    #[test]
    fn stop_guards() {
        let (task, pi, grid) = balance_setup();
        let cfg = VgmiConfig {
            k_min: 3,
            k_max: 6,
            ..Default::default()
        };
        let one_hot = BeliefDistribution::one_hot(grid.len(), 4);
        let early = check_stop(&one_hot, &pi, &grid, &task, &cfg, 2, None).unwrap();
        assert_eq!(early.decision, Decision::Continue);
        assert_eq!(early.weighted_deviation, None);

        let settled = check_stop(&one_hot, &pi, &grid, &task, &cfg, 3, None).unwrap();
        assert_eq!(settled.decision, Decision::Stop);
        assert_eq!(settled.weighted_deviation, Some(0.0));

        // a pole-less controller: values differ wildly across models
        let wild = Policy::new(&task.spec, vec![0.0, 0.0, 0.0, 0.0, 30.0], vec![1.0; 5]).unwrap();
        let spread = BeliefDistribution::new(vec![0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let capped = check_stop(&spread, &wild, &grid, &task, &cfg, 6, None).unwrap();
        assert_eq!(capped.decision, Decision::Stop);
    }

    #[test]
    fn diffuse_belief_does_not_stop_vacuously() {
        let (task, pi, grid) = balance_setup();
        let cfg = VgmiConfig {
            k_min: 1,
            eta: 0.2,
            ..Default::default()
        };
        // no model reaches eta, so nothing is checked
        let uniform = BeliefDistribution::uniform(grid.len());
        let check = check_stop(&uniform, &pi, &grid, &task, &cfg, 1, None).unwrap();
        assert_eq!(check.weighted_deviation, Some(0.0));
        assert_eq!(check.decision, Decision::Continue);
        let lax = VgmiConfig {
            min_checked_mass: 0.0,
            ..cfg
        };
        let check = check_stop(&uniform, &pi, &grid, &task, &lax, 1, None).unwrap();
        assert_eq!(check.decision, Decision::Stop);
    }

    #[test]
    fn final_refinement_fits_the_budget() {
        let grid = bowl_grid();
        let f = FnObjective::new(2, |x: &[f64]| ((x[0] - 0.43).powi(2) + (x[1] - 0.71).powi(2)).sqrt());
        let cfg = VgmiConfig {
            k_min: 1,
            k_max: 30,
            n_mc: 200,
            refine: false,
            final_refine: 8,
            ..Default::default()
        };
        let options = LoopOptions {
            budget: Some(BudgetSpec::evaluations(20)),
            ..Default::default()
        };
        let out = identify_with(&f, &grid, &cfg, &GreedyEntropy, options).unwrap();
        assert!(out.objective_evaluations <= 20);
        let grid_best = out
            .log
            .entries
            .iter()
            .filter(|e| grid.points().contains(&e.theta))
            .map(|e| e.error)
            .fold(f64::INFINITY, f64::min);
        let best = out.log.entries.iter().map(|e| e.error).fold(f64::INFINITY, f64::min);
        assert!(best < grid_best);
        assert_eq!(out.map_theta.0, out.log.entries.last().unwrap().theta.0);
    }

    #[test]
    fn entropy_target_ends_the_search() {
        let grid = bowl_grid();
        let f = FnObjective::new(2, |x: &[f64]| (x[0] - 0.4).abs() + (x[1] - 0.6).abs());
        let cfg = VgmiConfig {
            k_min: 1,
            k_max: grid.len(),
            n_mc: 300,
            refine: false,
            ..Default::default()
        };
        let options = LoopOptions {
            entropy_target: Some(0.5),
            ..Default::default()
        };
        let out = identify_with(&f, &grid, &cfg, &GreedyEntropy, options).unwrap();
        assert_eq!(out.stop_reason, StopReason::EntropyTarget);
        let last = out.iterations.last().unwrap();
        assert!(last.entropy <= 0.5);
        assert!(out.iterations[..out.iterations.len() - 1].iter().all(|r| r.entropy > 0.5));
    }
}
