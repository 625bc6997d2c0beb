use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::belief::{argmin, entropy_term};
use crate::data::TransitionDataset;
use crate::dynamics::SystemSpec;
use crate::error::Result;
use crate::grid::ModelGrid;
use crate::objective::SimulationError;
use crate::vgmi::{identify_with, Acquisition, AcquisitionContext, IdentifyOutcome, LoopOptions, VgmiConfig};

/// Acquisition by expected entropy reduction, estimated with a nested Monte
/// Carlo loop: for every candidate, `outcomes` hypothesized error values are
/// drawn from its marginal and the belief is re-estimated from
/// `inner_samples` posterior draws conditioned on each of them.
///
/// Conditioning reuses one set of joint draws per acquisition: a draw `f` of
/// the current posterior becomes a draw of the posterior given `E(c) = y` via
/// `f + Σ[:, c] (y - f(c) - ε) / (Σ[c, c] + σ²)` with `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct EntropySearch {
    pub outcomes: usize,
    pub inner_samples: usize,
}

impl Default for EntropySearch {
    fn default() -> Self {
        Self {
            outcomes: 10,
            inner_samples: 200,
        }
    }
}

impl Acquisition for EntropySearch {
    fn select(&self, ctx: &AcquisitionContext<'_>, seed: u64) -> usize {
        let g = ctx.grid.len();
        if g == 1 {
            return 0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = ctx.sampler.draw(self.inner_samples, &mut rng);
        let noise_var = ctx.gp.noise_variance();
        let noise: Vec<f64> = (0..self.inner_samples)
            .map(|_| noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let outcome_z: Vec<f64> = (0..self.outcomes).map(|_| rng.sample(StandardNormal)).collect();
        let current = ctx.belief.entropy();

        let any_fresh = ctx.evaluated.iter().any(|e| !e);
        let mut best = (0usize, f64::NEG_INFINITY);
        let mut counts = vec![0usize; g];
        for c in 0..g {
            if any_fresh && ctx.evaluated[c] {
                continue;
            }
            let denom = ctx.sampler.cov[(c, c)] + noise_var;
            let gain = if denom <= 1e-14 * ctx.gp.prior_variance() {
                0.0
            } else {
                let col = ctx.sampler.cov.column(c);
                let mut expected = 0.0;
                for z in &outcome_z {
                    let y = ctx.sampler.mean[c] + denom.sqrt() * z;
                    counts.iter_mut().for_each(|v| *v = 0);
                    for (i, draw) in draws.column_iter().enumerate() {
                        let t = (y - draw[c] - noise[i]) / denom;
                        let winner = argmin(draw.iter().zip(col.iter()).map(|(f, s)| f + s * t));
                        counts[winner] += 1;
                    }
                    let n = self.inner_samples as f64;
                    expected += counts.iter().map(|&k| entropy_term(k as f64 / n)).sum::<f64>();
                }
                current - expected / self.outcomes as f64
            };
            if gain > best.1 {
                best = (c, gain);
            }
        }
        best.0
    }
}

/// Entropy-search identification: the same loop as VGMI with the nested
/// Monte Carlo acquisition and no value-guided stopping, so it runs to `k_max`.
pub fn identify_entropy_search(
    data: &TransitionDataset,
    grid: &ModelGrid,
    spec: &SystemSpec,
    cfg: &VgmiConfig,
    settings: &EntropySearch,
) -> Result<IdentifyOutcome> {
    grid.check_against(spec)?;
    let objective = SimulationError::new(data, spec)?;
    identify_with(&objective, grid, cfg, settings, LoopOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::BeliefDistribution;
    use crate::dynamics::ModelParams;
    use crate::gp::{GpModel, Kernel};

    #[test]
    fn single_point_grid_is_trivial() {
        let grid = ModelGrid::new(vec![[0.0, 1.0]], vec![1]).unwrap();
        let gp = GpModel::fit(&[ModelParams(vec![0.2])], &[1.0], Kernel::new(1.0, vec![0.3]), 1e-6).unwrap();
        let sampler = gp.grid_sampler(&grid).unwrap();
        let belief = BeliefDistribution::uniform(1);
        let ctx = AcquisitionContext {
            grid: &grid,
            gp: &gp,
            sampler: &sampler,
            belief: &belief,
            evaluated: &[false],
        };
        assert_eq!(EntropySearch::default().select(&ctx, 0), 0);
    }

    #[test]
    fn prefers_uncertain_region_near_the_minimum() {
        // Low values near the left end, the right end pinned high: the
        // informative candidates are on the left.
        let grid = ModelGrid::new(vec![[0.0, 1.0]], vec![11]).unwrap();
        let pts = [ModelParams(vec![0.05]), ModelParams(vec![0.95]), ModelParams(vec![0.5])];
        let gp = GpModel::fit(&pts, &[0.2, 5.0, 3.0], Kernel::new(1.0, vec![0.15]), 1e-6).unwrap();
        let sampler = gp.grid_sampler(&grid).unwrap();
        let belief = crate::belief::estimate_from_sampler(&sampler, 500, 1).unwrap();
        let evaluated = vec![false; 11];
        let ctx = AcquisitionContext {
            grid: &grid,
            gp: &gp,
            sampler: &sampler,
            belief: &belief,
            evaluated: &evaluated,
        };
        let pick = EntropySearch::default().select(&ctx, 3);
        assert!(pick <= 4, "picked {pick}");
    }
}
