//! Deterministic toy physics systems with unknown mechanical parameters.
//!
//! Two systems are provided:
//!
//! * **cart-pole**: a point-mass pendulum on a cart driven by a horizontal
//!   force. The pole angle is measured from the downward vertical, so the
//!   hanging position is `0` and upright is `π`. Unknown parameters are
//!   `(cart mass, pole mass)` in kg.
//! * **planar-push**: an object sliding on a plane under Coulomb friction,
//!   pushed by a velocity-commanded pusher whose contact force is
//!   `push_gain * command`. Unknown parameters are `(mass kg, friction coefficient)`.
//!
//! Both use a 4-dimensional state and fixed-step RK4 integration.

use serde::{Deserialize, Serialize};
use std::ops::Deref;

use crate::error::{Error, Result};

/// Any state component beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Reward charged for every step remaining after a rollout diverges.
pub const DIVERGENCE_PENALTY: f64 = -1e3;

const STATE_DIM: usize = 4;

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }
    };
}

real_vector!(
    /// System state `x`.
    State
);
real_vector!(
    /// Control input `μ`.
    Action
);
real_vector!(
    /// Mechanical parameter vector `θ`.
    ModelParams
);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(deny_unknown_fields)]
pub enum SystemKind {
    CartPole {
        /// Distance from the pivot to the pole's point mass (m).
        pole_length: f64,
    },
    PlanarPush {
        /// Contact force per unit of commanded push speed (N·s/m).
        push_gain: f64,
        /// Sharpness of the tanh regularization of `sign(v)`.
        friction_sharpness: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub system: SystemKind,
    /// Admissible `[lower, upper]` range for every parameter dimension.
    pub param_bounds: Vec<[f64; 2]>,
    pub dt: f64,
    /// Symmetric actuator limit applied to every action component.
    pub action_bound: f64,
    pub gravity: f64,
    /// Per-component normalization of state discrepancies. When absent the
    /// scale is derived from the observed dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_scale: Option<Vec<f64>>,
}

impl SystemSpec {
    pub fn cart_pole() -> Self {
        Self {
            system: SystemKind::CartPole { pole_length: 0.5 },
            param_bounds: vec![[0.1, 5.0], [0.01, 1.0]],
            dt: 0.02,
            action_bound: 10.0,
            gravity: 9.81,
            state_scale: None,
        }
    }

    pub fn planar_push() -> Self {
        Self {
            system: SystemKind::PlanarPush {
                push_gain: 10.0,
                friction_sharpness: 1e3,
            },
            param_bounds: vec![[0.1, 5.0], [0.05, 1.0]],
            dt: 0.02,
            action_bound: 1.0,
            gravity: 9.81,
            state_scale: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        STATE_DIM
    }

    pub fn action_dim(&self) -> usize {
        match self.system {
            SystemKind::CartPole { .. } => 1,
            SystemKind::PlanarPush { .. } => 2,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.param_bounds.len()
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.system {
            SystemKind::CartPole { .. } => &["cart_mass", "pole_mass"],
            SystemKind::PlanarPush { .. } => &["mass", "friction"],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_bounds.len() != 2 {
            return Err(Error::InvalidSpec(format!(
                "expected 2 parameter dimensions, found {}",
                self.param_bounds.len()
            )));
        }
        for (i, [lo, hi]) in self.param_bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo < hi) {
                return Err(Error::InvalidSpec(format!(
                    "parameter bounds {i} must satisfy 0 < lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSpec(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.action_bound > 0.0 && self.action_bound.is_finite()) {
            return Err(Error::InvalidSpec("action_bound must be positive".into()));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(Error::InvalidSpec("gravity must be positive".into()));
        }
        match self.system {
            SystemKind::CartPole { pole_length } if !(pole_length > 0.0) => {
                return Err(Error::InvalidSpec("pole_length must be positive".into()));
            }
            SystemKind::PlanarPush {
                push_gain,
                friction_sharpness,
            } if !(push_gain > 0.0 && friction_sharpness > 0.0) => {
                return Err(Error::InvalidSpec(
                    "push_gain and friction_sharpness must be positive".into(),
                ));
            }
            _ => {}
        }
        if let Some(scale) = &self.state_scale {
            if scale.len() != STATE_DIM || scale.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidSpec(
                    "state_scale must hold 4 positive entries".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn check_params(&self, theta: &ModelParams) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                what: "model parameters",
                expected: self.param_dim(),
                found: theta.len(),
            });
        }
        for (dim, (&value, [lower, upper])) in theta.iter().zip(&self.param_bounds).enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("model parameters"));
            }
            if value < *lower || value > *upper {
                return Err(Error::OutOfBounds {
                    dim,
                    value,
                    lower: *lower,
                    upper: *upper,
                });
            }
        }
        Ok(())
    }

    /// RK4 substeps per control step. The planar pusher's regularized friction
    /// is stiff near zero velocity, so it is subdivided until the linearized
    /// decay rate times the substep stays within 2 at the upper friction bound.
    pub fn substeps(&self) -> usize {
        match self.system {
            SystemKind::CartPole { .. } => 1,
            SystemKind::PlanarPush {
                friction_sharpness, ..
            } => {
                let max_friction = self.param_bounds[1][1];
                let stiffness = max_friction * self.gravity * friction_sharpness;
                ((self.dt * stiffness / 2.0).ceil() as usize).max(1)
            }
        }
    }

    /// Features seen by a linear policy. The cart-pole angle is expressed
    /// relative to upright and wrapped to `(-π, π]`.
    pub fn observe(&self, x: &[f64]) -> [f64; STATE_DIM] {
        let mut obs = [x[0], x[1], x[2], x[3]];
        if let SystemKind::CartPole { .. } = self.system {
            obs[2] = wrap_angle(x[2] - std::f64::consts::PI);
        }
        obs
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: State,
    pub mu: Action,
    pub x_next: State,
}

fn derivative(spec: &SystemSpec, s: &[f64; 4], u: &[f64], theta: &[f64]) -> [f64; 4] {
    match spec.system {
        SystemKind::CartPole { pole_length: l } => {
            let (cart, pole) = (theta[0], theta[1]);
            let g = spec.gravity;
            let (sin, cos) = s[2].sin_cos();
            let omega = s[3];
            let acc = (u[0] + pole * sin * (g * cos + l * omega * omega)) / (cart + pole * sin * sin);
            let ang_acc = -(acc * cos + g * sin) / l;
            [s[1], acc, omega, ang_acc]
        }
        SystemKind::PlanarPush {
            push_gain,
            friction_sharpness,
        } => {
            let (mass, friction) = (theta[0], theta[1]);
            let (vx, vy) = (s[2], s[3]);
            let speed = vx.hypot(vy);
            // tanh(k|v|)/|v| with its limit k at rest
            let reg = if speed > 1e-12 {
                (friction_sharpness * speed).tanh() / speed
            } else {
                friction_sharpness
            };
            let decel = friction * spec.gravity * reg;
            [
                vx,
                vy,
                push_gain * u[0] / mass - decel * vx,
                push_gain * u[1] / mass - decel * vy,
            ]
        }
    }
}

fn rk4(spec: &SystemSpec, s: &[f64; 4], u: &[f64], theta: &[f64], h: f64) -> [f64; 4] {
    let add = |a: &[f64; 4], b: &[f64; 4], w: f64| -> [f64; 4] {
        [a[0] + w * b[0], a[1] + w * b[1], a[2] + w * b[2], a[3] + w * b[3]]
    };
    let k1 = derivative(spec, s, u, theta);
    let k2 = derivative(spec, &add(s, &k1, h / 2.0), u, theta);
    let k3 = derivative(spec, &add(s, &k2, h / 2.0), u, theta);
    let k4 = derivative(spec, &add(s, &k3, h), u, theta);
    let mut out = *s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Advances the system by one control step `dt`. Actions beyond the
/// actuator bound saturate.
pub fn step(spec: &SystemSpec, x: &State, mu: &Action, theta: &ModelParams) -> Result<State> {
    if x.len() != STATE_DIM {
        return Err(Error::DimensionMismatch {
            what: "state",
            expected: STATE_DIM,
            found: x.len(),
        });
    }
    if mu.len() != spec.action_dim() {
        return Err(Error::DimensionMismatch {
            what: "action",
            expected: spec.action_dim(),
            found: mu.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state"));
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    spec.check_params(theta)?;

    let u: Vec<f64> = mu
        .iter()
        .map(|v| v.clamp(-spec.action_bound, spec.action_bound))
        .collect();
    let n = spec.substeps();
    let h = spec.dt / n as f64;
    let mut s = [x[0], x[1], x[2], x[3]];
    for _ in 0..n {
        s = rk4(spec, &s, &u, theta, h);
    }
    if s.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::Diverged);
    }
    Ok(State(s.to_vec()))
}

/// Maps a state to an action.
pub trait Controller {
    fn act(&self, spec: &SystemSpec, x: &State) -> Action;
}

impl<F> Controller for F
where
    F: Fn(&SystemSpec, &State) -> Action,
{
    fn act(&self, spec: &SystemSpec, x: &State) -> Action {
        self(spec, x)
    }
}

/// Per-step reward `R(x, μ)`.
pub trait Reward {
    fn reward(&self, spec: &SystemSpec, x: &State, mu: &Action) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
    /// Set when the state diverged and the remaining steps were charged the penalty.
    pub diverged: bool,
}

/// Runs `controller` for `horizon` steps from `x0`, summing `R(x_t, μ_t)`.
pub fn rollout<C, R>(
    spec: &SystemSpec,
    controller: &C,
    reward: &R,
    theta: &ModelParams,
    x0: &State,
    horizon: usize,
) -> Result<Trajectory>
where
    C: Controller + ?Sized,
    R: Reward + ?Sized,
{
    if horizon == 0 {
        return Err(Error::InvalidSpec("rollout horizon must be at least 1".into()));
    }
    let mut transitions = Vec::with_capacity(horizon);
    let mut total = 0.0;
    let mut x = x0.clone();
    for t in 0..horizon {
        let mu = controller.act(spec, &x);
        match step(spec, &x, &mu, theta) {
            Ok(next) => {
                total += reward.reward(spec, &x, &mu);
                transitions.push(Transition {
                    x,
                    mu,
                    x_next: next.clone(),
                });
                x = next;
            }
            Err(Error::Diverged) => {
                total += DIVERGENCE_PENALTY * (horizon - t) as f64;
                return Ok(Trajectory {
                    transitions,
                    total_reward: total,
                    diverged: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory {
        transitions,
        total_reward: total,
        diverged: false,
    })
}
