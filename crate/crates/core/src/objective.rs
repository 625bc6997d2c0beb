//! The simulation-error objective shared by every identifier, plus a
//! budget-enforcing evaluation tracker.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::dynamics::{step, ModelParams, SystemSpec};
use crate::error::{Error, Result};

/// Error charged for a transition whose prediction diverges.
pub const DIVERGED_TRANSITION_ERROR: f64 = 1e3;

pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Objective value; `+inf` when `theta` cannot be evaluated.
    fn evaluate(&self, theta: &[f64]) -> f64;
}

/// Summed one-step prediction error of a model over a transition dataset.
#[derive(Debug, Clone)]
pub struct SimulationError<'a> {
    data: &'a TransitionDataset,
    spec: &'a SystemSpec,
    inv_scale: Vec<f64>,
}

impl<'a> SimulationError<'a> {
    pub fn new(data: &'a TransitionDataset, spec: &'a SystemSpec) -> Result<Self> {
        data.validate(spec)?;
        let scale = spec
            .state_scale
            .clone()
            .unwrap_or_else(|| data.component_scale(spec.state_dim()));
        Ok(Self {
            data,
            spec,
            inv_scale: scale.iter().map(|s| 1.0 / s).collect(),
        })
    }

    pub fn scale(&self) -> Vec<f64> {
        self.inv_scale.iter().map(|s| 1.0 / s).collect()
    }

    /// Summed scaled `‖x' - f(x, μ, θ)‖₂` over all transitions.
    pub fn error(&self, theta: &ModelParams) -> Result<f64> {
        self.spec.check_params(theta)?;
        let mut total = 0.0;
        for t in &self.data.transitions {
            total += match step(self.spec, &t.x, &t.mu, theta) {
                Ok(pred) => pred
                    .iter()
                    .zip(t.x_next.iter())
                    .zip(&self.inv_scale)
                    .map(|((p, o), s)| ((o - p) * s).powi(2))
                    .sum::<f64>()
                    .sqrt(),
                Err(Error::Diverged) => DIVERGED_TRANSITION_ERROR,
                Err(e) => return Err(e),
            };
        }
        Ok(total)
    }
}

impl Objective for SimulationError<'_> {
    fn dim(&self) -> usize {
        self.spec.param_dim()
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        self.error(&ModelParams(theta.to_vec())).unwrap_or(f64::INFINITY)
    }
}

pub fn simulation_error(data: &TransitionDataset, theta: &ModelParams, spec: &SystemSpec) -> Result<f64> {
    SimulationError::new(data, spec)?.error(theta)
}

/// Wraps a closure as an objective; used by tests to substitute analytic functions.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }
}

/// Counts calls to an inner objective.
pub struct CountingObjective<'a, O: ?Sized> {
    inner: &'a O,
    calls: AtomicUsize,
}

impl<'a, O: Objective + ?Sized> CountingObjective<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<O: Objective + ?Sized> Objective for CountingObjective<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    #[serde(default)]
    pub max_evaluations: Option<usize>,
    #[serde(default)]
    pub max_seconds: Option<f64>,
}

impl BudgetSpec {
    pub fn evaluations(n: usize) -> Self {
        Self {
            max_evaluations: Some(n),
            max_seconds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.max_evaluations, self.max_seconds) {
            (None, None) => Err(Error::config("budget", "at least one limit must be set")),
            (_, Some(s)) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::config("budget.max_seconds", "must be positive and finite"))
            }
            (Some(0), _) => Err(Error::config("budget.max_evaluations", "must be at least 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub theta: Vec<f64>,
    pub error: f64,
    pub best_error: f64,
    pub elapsed_s: f64,
}

/// Evaluation log with budget enforcement. Once the budget is spent,
/// [`Tracker::evaluate`] returns `None` without calling the objective.
pub struct Tracker<'a, O: ?Sized> {
    objective: &'a O,
    budget: BudgetSpec,
    start: Instant,
    trace: Mutex<Vec<TraceEntry>>,
}

impl<'a, O: Objective + ?Sized> Tracker<'a, O> {
    pub fn new(objective: &'a O, budget: BudgetSpec) -> Self {
        Self {
            objective,
            budget,
            start: Instant::now(),
            trace: Mutex::new(Vec::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn evaluations(&self) -> usize {
        self.trace.lock().expect("trace lock").len()
    }

    pub fn exhausted(&self) -> bool {
        let over_count = self
            .budget
            .max_evaluations
            .is_some_and(|max| self.evaluations() >= max);
        let over_time = self
            .budget
            .max_seconds
            .is_some_and(|max| self.start.elapsed().as_secs_f64() >= max);
        over_count || over_time
    }

    pub fn evaluate(&self, theta: &[f64]) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        let error = self.objective.evaluate(theta);
        let mut trace = self.trace.lock().expect("trace lock");
        let best = trace.last().map_or(f64::INFINITY, |e| e.best_error).min(error);
        let index = trace.len();
        trace.push(TraceEntry {
            index,
            theta: theta.to_vec(),
            error,
            best_error: best,
            elapsed_s: self.start.elapsed().as_secs_f64(),
        });
        Some(error)
    }

    /// Best evaluated point, earliest on ties.
    pub fn best(&self) -> Option<(Vec<f64>, f64)> {
        let trace = self.trace.lock().expect("trace lock");
        let mut best: Option<&TraceEntry> = None;
        for e in trace.iter() {
            if best.is_none_or(|b| e.error < b.error) {
                best = Some(e);
            }
        }
        best.map(|e| (e.theta.clone(), e.error))
    }

    pub fn into_trace(self) -> Vec<TraceEntry> {
        self.trace.into_inner().expect("trace lock")
    }
}
