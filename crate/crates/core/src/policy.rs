//! Linear-Gaussian policies, their value under a model, and a KL-bounded
//! search-distribution update.
//!
//! A policy is a linear state-feedback law with a bias per action dimension.
//! Its exploration covariance is a diagonal Gaussian over the weights: the
//! stochastic policy draws one weight vector per rollout, and the same
//! Gaussian is the search distribution that [`policy_update`] moves under a
//! KL bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, wrap_angle, Action, Controller, ModelParams, Reward, State, SystemSpec, Trajectory};
use crate::error::{Error, Result};

/// Smallest variance allowed in a search distribution.
pub const MIN_VARIANCE: f64 = 1e-6;
/// Slack allowed when checking that an update does not lose value.
pub const VALUE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub weights: Vec<f64>,
    pub exploration: Vec<f64>,
}

impl Policy {
    pub fn weight_count(spec: &SystemSpec) -> usize {
        (spec.state_dim() + 1) * spec.action_dim()
    }

    pub fn new(spec: &SystemSpec, weights: Vec<f64>, exploration: Vec<f64>) -> Result<Self> {
        let n = Self::weight_count(spec);
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                what: "policy weights",
                expected: n,
                found: weights.len(),
            });
        }
        if exploration.len() != n {
            return Err(Error::DimensionMismatch {
                what: "policy exploration",
                expected: n,
                found: exploration.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) || exploration.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("policy"));
        }
        Ok(Self { weights, exploration })
    }

    /// Zero gains with isotropic exploration variance.
    pub fn zeros(spec: &SystemSpec, variance: f64) -> Self {
        let n = Self::weight_count(spec);
        Self {
            weights: vec![0.0; n],
            exploration: vec![variance; n],
        }
    }

    pub fn mean_action(&self, spec: &SystemSpec, x: &[f64]) -> Action {
        let obs = spec.observe(x);
        let stride = obs.len() + 1;
        Action(
            self.weights
                .chunks(stride)
                .map(|w| w[..obs.len()].iter().zip(&obs).map(|(a, b)| a * b).sum::<f64>() + w[obs.len()])
                .collect(),
        )
    }

    /// Deterministic policy with weights drawn from the exploration Gaussian.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Policy {
        let weights = self
            .weights
            .iter()
            .zip(&self.exploration)
            .map(|(w, v)| w + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Policy {
            weights,
            exploration: vec![0.0; self.weights.len()],
        }
    }
}

impl Controller for Policy {
    fn act(&self, spec: &SystemSpec, x: &State) -> Action {
        self.mean_action(spec, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(deny_unknown_fields)]
pub enum RewardSpec {
    /// 1 per step while the pole is within `band` rad of upright.
    Balance { band: f64 },
    /// Negative distance of the object to `goal`, 0 once within `tolerance`.
    Goal { goal: [f64; 2], tolerance: f64 },
    Constant { value: f64 },
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            RewardSpec::Balance { band } => band.is_finite() && *band > 0.0,
            RewardSpec::Goal { goal, tolerance } => {
                goal.iter().all(|g| g.is_finite()) && tolerance.is_finite() && *tolerance >= 0.0
            }
            RewardSpec::Constant { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("reward", "parameters must be finite"))
        }
    }
}

impl Reward for RewardSpec {
    fn reward(&self, _spec: &SystemSpec, x: &State, _mu: &Action) -> f64 {
        match self {
            RewardSpec::Balance { band } => {
                if wrap_angle(x[2] - std::f64::consts::PI).abs() < *band {
                    1.0
                } else {
                    0.0
                }
            }
            RewardSpec::Goal { goal, tolerance } => {
                let d = (x[0] - goal[0]).hypot(x[1] - goal[1]);
                if d <= *tolerance {
                    0.0
                } else {
                    -d
                }
            }
            RewardSpec::Constant { value } => *value,
        }
    }
}

/// Everything needed to score a policy under a model: system, reward, start
/// state and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub spec: SystemSpec,
    pub reward: RewardSpec,
    pub start: State,
    pub horizon: usize,
}

impl Task {
    pub fn cart_pole_balance() -> Self {
        Self {
            spec: SystemSpec::cart_pole(),
            reward: RewardSpec::Balance { band: 0.2 },
            start: State(vec![0.0, 0.0, std::f64::consts::PI - 0.1, 0.0]),
            horizon: 100,
        }
    }

    pub fn planar_push() -> Self {
        Self {
            spec: SystemSpec::planar_push(),
            reward: RewardSpec::Goal {
                goal: [0.5, 0.3],
                tolerance: 0.02,
            },
            start: State(vec![0.0; 4]),
            horizon: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.reward.validate()?;
        if self.horizon == 0 {
            return Err(Error::config("task.horizon", "must be at least 1"));
        }
        if self.start.len() != self.spec.state_dim() || self.start.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("task.start", "must be a finite state of the system's dimension"));
        }
        Ok(())
    }

    pub fn rollout(&self, controller: &impl Controller, theta: &ModelParams) -> Result<Trajectory> {
        rollout(&self.spec, controller, &self.reward, theta, &self.start, self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub horizon: usize,
    pub model: ModelParams,
    pub start: State,
}

/// Value of the mean policy under `theta`: the reward summed over the task horizon.
pub fn policy_value(pi: &Policy, theta: &ModelParams, task: &Task) -> Result<ValueEstimate> {
    let traj = task.rollout(pi, theta)?;
    Ok(ValueEstimate {
        value: traj.total_reward,
        horizon: task.horizon,
        model: theta.clone(),
        start: task.start.clone(),
    })
}

/// `KL(new ‖ old)` between diagonal Gaussians given by means and variances.
pub fn gaussian_kl(new_mean: &[f64], new_var: &[f64], old_mean: &[f64], old_var: &[f64]) -> f64 {
    0.5 * new_mean
        .iter()
        .zip(new_var)
        .zip(old_mean.iter().zip(old_var))
        .map(|((m1, v1), (m0, v0))| v1 / v0 + (m1 - m0).powi(2) / v0 - 1.0 + (v0 / v1).ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct PolicySearchConfig {
    pub kl_bound: f64,
    pub candidates: usize,
    pub elite_fraction: f64,
}

impl Default for PolicySearchConfig {
    fn default() -> Self {
        Self {
            kl_bound: 0.05,
            candidates: 50,
            elite_fraction: 0.25,
        }
    }
}

impl PolicySearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_bound > 0.0 && self.kl_bound.is_finite()) {
            return Err(Error::config("policy_search.kl_bound", "must be positive"));
        }
        if self.candidates == 0 {
            return Err(Error::config("policy_search.candidates", "must be at least 1"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::config("policy_search.elite_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyUpdate {
    pub policy: Policy,
    /// KL from the previous search distribution to the returned one.
    pub kl: f64,
    pub value_before: f64,
    pub value_after: f64,
    /// Rollouts simulated during the update.
    pub rollouts: usize,
}

/// One KL-bounded improvement step of the search distribution, entirely in
/// simulation under `theta`.
///
/// Candidates are drawn from the current Gaussian, the top fraction is refit
/// into a new Gaussian, and the move towards it is shrunk (by bisection on a
/// shared interpolation factor for the mean and log-variances) until the KL
/// from the old distribution is within the bound. The mean of the result is
/// accepted only if it does not lose value; otherwise the step keeps halving,
/// and if no sampled candidate beat the current policy the input is returned.
pub fn policy_update(
    pi: &Policy,
    theta: &ModelParams,
    task: &Task,
    cfg: &PolicySearchConfig,
    seed: u64,
) -> Result<PolicyUpdate> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let old_mean = &pi.weights;
    let old_var: Vec<f64> = pi.exploration.iter().map(|v| v.max(MIN_VARIANCE)).collect();
    let base = Policy {
        weights: old_mean.clone(),
        exploration: old_var.clone(),
    };
    let value_before = policy_value(pi, theta, task)?.value;
    let mut rollouts = 1;

    let mut scored = Vec::with_capacity(cfg.candidates);
    for _ in 0..cfg.candidates {
        let cand = base.sample(&mut rng);
        let v = policy_value(&cand, theta, task)?.value;
        rollouts += 1;
        scored.push((v, cand.weights));
    }
    let unchanged = |rollouts| PolicyUpdate {
        policy: pi.clone(),
        kl: 0.0,
        value_before,
        value_after: value_before,
        rollouts,
    };
    if !scored.iter().any(|(v, _)| *v > value_before) {
        return Ok(unchanged(rollouts));
    }

    // stable sort keeps sampling order among equal values
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let elites = ((cfg.candidates as f64 * cfg.elite_fraction).floor() as usize).max(1);
    let n = old_mean.len();
    let mut elite_mean = vec![0.0; n];
    for (_, w) in &scored[..elites] {
        for (m, x) in elite_mean.iter_mut().zip(w) {
            *m += x / elites as f64;
        }
    }
    let mut elite_var = vec![0.0; n];
    for (_, w) in &scored[..elites] {
        for ((v, x), m) in elite_var.iter_mut().zip(w).zip(&elite_mean) {
            *v += (x - m).powi(2) / elites as f64;
        }
    }
    elite_var.iter_mut().for_each(|v| *v = v.max(MIN_VARIANCE));

    let at = |alpha: f64| -> (Vec<f64>, Vec<f64>) {
        let mean = old_mean
            .iter()
            .zip(&elite_mean)
            .map(|(a, b)| a + alpha * (b - a))
            .collect();
        let var = old_var
            .iter()
            .zip(&elite_var)
            .map(|(a, b)| (a.ln() + alpha * (b.ln() - a.ln())).exp())
            .collect();
        (mean, var)
    };
    let kl_at = |alpha: f64| {
        let (m, v) = at(alpha);
        gaussian_kl(&m, &v, old_mean, &old_var)
    };

    let mut alpha = 1.0;
    if kl_at(1.0) > cfg.kl_bound {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if kl_at(mid) <= cfg.kl_bound {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        alpha = lo;
    }

    for _ in 0..30 {
        let (mean, var) = at(alpha);
        let kl = gaussian_kl(&mean, &var, old_mean, &old_var);
        let candidate = Policy {
            weights: mean,
            exploration: var,
        };
        let value_after = policy_value(&candidate, theta, task)?.value;
        rollouts += 1;
        if kl <= cfg.kl_bound && value_after >= value_before - VALUE_TOLERANCE {
            return Ok(PolicyUpdate {
                policy: candidate,
                kl,
                value_before,
                value_after,
                rollouts,
            });
        }
        alpha *= 0.5;
    }
    Ok(unchanged(rollouts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn stabilizing() -> Policy {
        let spec = SystemSpec::cart_pole();
        Policy::new(&spec, vec![3.0, 5.5, -45.0, -10.0, 0.0], vec![1.0; 5]).unwrap()
    }

    #[test]
    fn linear_action_uses_upright_relative_angle() {
        let spec = SystemSpec::cart_pole();
        let pi = Policy::new(&spec, vec![1.0, 2.0, 3.0, 4.0, 0.5], vec![0.0; 5]).unwrap();
        let a = pi.mean_action(&spec, &[0.1, 0.2, PI + 0.3, 0.4]);
        assert!((a[0] - (0.1 + 0.4 + 0.9 + 1.6 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn single_step_value_is_first_reward() {
        let mut task = Task::cart_pole_balance();
        task.horizon = 1;
        let pi = stabilizing();
        let theta = ModelParams(vec![1.0, 0.1]);
        let v = policy_value(&pi, &theta, &task).unwrap();
        let mu = pi.mean_action(&task.spec, &task.start);
        assert_eq!(v.value, task.reward.reward(&task.spec, &task.start, &mu));
        assert_eq!(v.value, 1.0);
    }

    #[test]
    fn constant_reward_scales_with_horizon() {
        let mut task = Task::cart_pole_balance();
        task.reward = RewardSpec::Constant { value: 2.5 };
        task.horizon = 37;
        let v = policy_value(&stabilizing(), &ModelParams(vec![0.7, 0.2]), &task).unwrap();
        assert!((v.value - 2.5 * 37.0).abs() < 1e-12);
    }

    #[test]
    fn goal_reward() {
        let spec = SystemSpec::planar_push();
        let r = RewardSpec::Goal {
            goal: [3.0, 4.0],
            tolerance: 0.1,
        };
        let zero = Action(vec![0.0, 0.0]);
        assert!((r.reward(&spec, &State(vec![0.0; 4]), &zero) + 5.0).abs() < 1e-12);
        assert_eq!(r.reward(&spec, &State(vec![3.0, 4.05, 0.0, 0.0]), &zero), 0.0);
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        assert_eq!(gaussian_kl(&[1.0, 2.0], &[0.5, 3.0], &[1.0, 2.0], &[0.5, 3.0]), 0.0);
        let kl = gaussian_kl(&[1.0], &[1.0], &[0.0], &[1.0]);
        assert!((kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn vanishing_bound_freezes_the_policy() {
        let task = Task::cart_pole_balance();
        let pi = Policy::zeros(&task.spec, 25.0);
        let cfg = PolicySearchConfig {
            kl_bound: 1e-14,
            ..Default::default()
        };
        let up = policy_update(&pi, &ModelParams(vec![1.0, 0.1]), &task, &cfg, 4).unwrap();
        for (a, b) in up.policy.weights.iter().zip(&pi.weights) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_reward_leaves_policy_unchanged() {
        let mut task = Task::cart_pole_balance();
        task.reward = RewardSpec::Constant { value: 1.0 };
        let pi = Policy::zeros(&task.spec, 4.0);
        let up = policy_update(&pi, &ModelParams(vec![1.0, 0.1]), &task, &PolicySearchConfig::default(), 1).unwrap();
        assert_eq!(up.policy, pi);
        assert_eq!(up.kl, 0.0);
    }

    #[test]
    fn degenerate_exploration_is_reinflated() {
        let task = Task::cart_pole_balance();
        let pi = Policy::zeros(&task.spec, 0.0);
        let up = policy_update(&pi, &ModelParams(vec![1.0, 0.1]), &task, &PolicySearchConfig::default(), 2).unwrap();
        assert!(up.kl.is_finite());
        assert!(up.value_after >= up.value_before - VALUE_TOLERANCE);
    }

    #[test]
    fn invalid_policy_shapes_rejected() {
        let spec = SystemSpec::cart_pole();
        assert!(Policy::new(&spec, vec![0.0; 4], vec![0.0; 5]).is_err());
        assert!(Policy::new(&spec, vec![0.0; 5], vec![-1.0; 5]).is_err());
        assert_eq!(Policy::weight_count(&SystemSpec::planar_push()), 10);
    }
}
