use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BaselineResult;
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::objective::{BudgetSpec, Objective, Tracker};
use crate::optimize::QuasiNewton;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct LeastSquaresOptions {
    /// Restart from uniform random points until the budget is spent.
    pub multi_start: bool,
    /// First starting point; the box center when absent.
    pub initial: Option<Vec<f64>>,
    /// Finite-difference step relative to each bound's extent.
    pub relative_step: f64,
    pub max_iterations: usize,
}

impl Default for LeastSquaresOptions {
    fn default() -> Self {
        Self {
            multi_start: true,
            initial: None,
            relative_step: 1e-6,
            max_iterations: 200,
        }
    }
}

/// Box-constrained quasi-Newton minimization with restarts.
pub fn identify_least_squares<O: Objective + ?Sized>(
    objective: &O,
    bounds: &[[f64; 2]],
    budget: BudgetSpec,
    options: &LeastSquaresOptions,
    seed: u64,
) -> Result<BaselineResult> {
    let n = objective.dim();
    if bounds.len() != n || bounds.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(Error::config("bounds", "need one finite lower < upper pair per dimension"));
    }
    budget.validate()?;
    let tracker = Tracker::new(objective, budget);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qn = QuasiNewton::new(bounds.iter().map(|[lo, hi]| options.relative_step * (hi - lo)).collect());
    qn.max_iterations = options.max_iterations;
    qn.gradient_tolerance = 1e-12;

    let mut start: Vec<f64> = options
        .initial
        .clone()
        .unwrap_or_else(|| bounds.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect());
    loop {
        let result = qn.minimize(|x| tracker.evaluate(x), &start, bounds);
        if result.is_none() || tracker.exhausted() || !options.multi_start {
            break;
        }
        start = bounds.iter().map(|[lo, hi]| rng.random_range(*lo..*hi)).collect();
    }

    let (theta, error) = tracker
        .best()
        .ok_or_else(|| Error::config("budget", "no evaluation was allowed"))?;
    Ok(BaselineResult {
        theta: ModelParams(theta),
        error,
        trace: tracker.into_trace(),
    })
}
