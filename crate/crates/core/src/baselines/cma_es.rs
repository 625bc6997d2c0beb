use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::BaselineResult;
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::objective::{BudgetSpec, Objective, Tracker};

const MAX_RESAMPLES: usize = 100;

/// (μ/μ_w, λ)-CMA-ES with the standard default strategy parameters, run in
/// coordinates normalized to the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaEs {
    pub population: usize,
    /// Initial step size as a fraction of each bound's extent.
    pub initial_step: f64,
}

impl CmaEs {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            population: 4 + (3.0 * (dim as f64).ln()).floor() as usize,
            initial_step: 0.3,
        }
    }
}

fn check_bounds(bounds: &[[f64; 2]], dim: usize) -> Result<()> {
    if bounds.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "bounds",
            expected: dim,
            found: bounds.len(),
        });
    }
    if bounds.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(Error::config("bounds", "need finite lower < upper"));
    }
    Ok(())
}

/// Minimizes `objective` inside `bounds` with CMA-ES started at the box
/// center. Returns the best point ever evaluated.
pub fn identify_cma_es<O: Objective + ?Sized>(
    objective: &O,
    bounds: &[[f64; 2]],
    budget: BudgetSpec,
    seed: u64,
) -> Result<BaselineResult> {
    let n = objective.dim();
    check_bounds(bounds, n)?;
    budget.validate()?;
    let settings = CmaEs::for_dim(n);
    let tracker = Tracker::new(objective, budget);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_world = |u: &DVector<f64>| -> Vec<f64> {
        u.iter()
            .zip(bounds)
            .map(|(v, [lo, hi])| lo + v.clamp(0.0, 1.0) * (hi - lo))
            .collect()
    };

    let nf = n as f64;
    let lambda = settings.population;
    let mu = lambda / 2;
    let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let cc = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let cs = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let cmu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let damps = 1.0 + 2.0 * (0.0f64).max(((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut mean = DVector::from_element(n, 0.5);
    let mut sigma = settings.initial_step;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);
    let mut generation = 0usize;

    'outer: loop {
        let eig = SymmetricEigen::new(cov.clone());
        let b = eig.eigenvectors.clone();
        let d = eig.eigenvalues.map(|v| v.max(1e-20).sqrt());
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();

        let mut offspring: Vec<(f64, DVector<f64>)> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut u = DVector::zeros(n);
            for attempt in 0..MAX_RESAMPLES {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &b * d.component_mul(&z);
                u = &mean + sigma * y;
                if u.iter().all(|v| (0.0..=1.0).contains(v)) || attempt + 1 == MAX_RESAMPLES {
                    break;
                }
            }
            u.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            match tracker.evaluate(&to_world(&u)) {
                Some(f) => offspring.push((f, u)),
                None => break 'outer,
            }
        }
        generation += 1;

        offspring.sort_by(|a, b| a.0.total_cmp(&b.0));
        let old_mean = mean.clone();
        mean = DVector::zeros(n);
        for (w, (_, u)) in weights.iter().zip(&offspring) {
            mean += *w * u;
        }
        let step = (&mean - &old_mean) / sigma;
        ps = (1.0 - cs) * &ps + (cs * (2.0 - cs) * mu_eff).sqrt() * (&inv_sqrt * &step);
        let hsig_bound = (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let hsig = ps.norm() / (1.0 - (1.0 - cs).powi(2 * generation as i32)).sqrt() < hsig_bound;
        let hsig = if hsig { 1.0 } else { 0.0 };
        pc = (1.0 - cc) * &pc + hsig * (cc * (2.0 - cc) * mu_eff).sqrt() * &step;
        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, (_, u)) in weights.iter().zip(&offspring) {
            let y = (u - &old_mean) / sigma;
            rank_mu += *w * &y * y.transpose();
        }
        cov = (1.0 - c1 - cmu) * &cov
            + c1 * (&pc * pc.transpose() + (1.0 - hsig) * cc * (2.0 - cc) * &cov)
            + cmu * rank_mu;
        cov = 0.5 * (&cov + cov.transpose());
        sigma *= ((cs / damps) * (ps.norm() / chi_n - 1.0)).exp();
        if !sigma.is_finite() || sigma < 1e-300 || cov.iter().any(|v| !v.is_finite()) {
            break;
        }
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
