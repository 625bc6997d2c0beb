//! Belief over which grid point minimizes the error function, and the
//! greedy entropy acquisition built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::gp::{GpModel, GridSampler};
use crate::grid::ModelGrid;

/// Tolerance on the total mass of a belief.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefDistribution {
    probabilities: Vec<f64>,
}

impl BeliefDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidBelief("empty".into()));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidBelief("entries must be finite and nonnegative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidBelief(format!("mass sums to {total}")));
        }
        Ok(Self { probabilities })
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            probabilities: vec![1.0 / len as f64; len],
        }
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut probabilities = vec![0.0; len];
        probabilities[index] = 1.0;
        Self { probabilities }
    }

    /// Normalized counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidBelief("no counts".into()));
        }
        Ok(Self {
            probabilities: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Index of the most probable point, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probabilities.iter().map(|&p| entropy_term(p)).sum()
    }

    /// Draws an index from the belief.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probabilities.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.argmax()
    }
}

/// `-p ln p` with `0 ln 0 = 0`.
pub fn entropy_term(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

/// Index of the smallest entry, lowest index on ties.
pub(crate) fn argmin(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v < best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Counts how often each grid point is the argmin across the columns of `draws`.
pub(crate) fn argmin_counts(draws: &nalgebra::DMatrix<f64>) -> Vec<usize> {
    let mut counts = vec![0usize; draws.nrows()];
    for col in draws.column_iter() {
        counts[argmin(col.iter().copied())] += 1;
    }
    counts
}

/// Monte Carlo estimate of `P(θ = argmin E)` from `n_mc` joint posterior draws.
pub fn estimate_min_distribution(
    gp: &GpModel,
    grid: &ModelGrid,
    n_mc: usize,
    seed: u64,
) -> Result<BeliefDistribution> {
    let sampler = gp.grid_sampler(grid)?;
    estimate_from_sampler(&sampler, n_mc, seed)
}

pub fn estimate_from_sampler(sampler: &GridSampler, n_mc: usize, seed: u64) -> Result<BeliefDistribution> {
    if n_mc == 0 {
        return Err(Error::config("vgmi.n_mc", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = sampler.draw(n_mc, &mut rng);
    BeliefDistribution::from_counts(&argmin_counts(&draws))
}

/// Grid index with the largest entropy contribution, restricted to indices
/// for which `eligible` holds. Lowest index wins ties.
pub fn select_index(belief: &BeliefDistribution, eligible: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in belief.probabilities().iter().enumerate() {
        if !eligible(i) {
            continue;
        }
        let h = entropy_term(p);
        if best.is_none_or(|(_, b)| h > b) {
            best = Some((i, h));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy entropy acquisition: the grid point maximizing `-P ln P`.
pub fn select_next_model(belief: &BeliefDistribution, grid: &ModelGrid) -> Result<ModelParams> {
    if belief.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            what: "belief",
            expected: grid.len(),
            found: belief.len(),
        });
    }
    let index = select_index(belief, |_| true).expect("belief is non-empty");
    Ok(grid.point(index).clone())
}
