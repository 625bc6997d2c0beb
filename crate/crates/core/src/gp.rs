//! Gaussian-process surrogate of the simulation error.
//!
//! Targets are standardized to zero mean and unit variance before fitting and
//! mapped back on prediction, so the kernel's signal variance and the
//! observation noise are both expressed relative to the target variance.
//! The kernel is squared-exponential with one lengthscale per dimension.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::grid::ModelGrid;

/// Diagonal regularization, relative to the signal variance.
pub const JITTER: f64 = 1e-10;
/// Largest jitter tried before a factorization is declared failed.
pub const MAX_JITTER: f64 = 1e-4;
/// Largest grid that may be sampled jointly.
pub const MAX_GRID_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl Kernel {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Self {
        Self {
            signal_variance,
            lengthscales,
        }
    }

    /// Lengthscales at 0.3 of each grid extent and unit (standardized) signal variance.
    pub fn default_for(grid: &ModelGrid) -> Self {
        Self::new(1.0, grid.extent().iter().map(|e| 0.3 * e).collect())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "kernel lengthscales",
                expected: dim,
                found: self.lengthscales.len(),
            });
        }
        let ok = self.signal_variance > 0.0
            && self.signal_variance.is_finite()
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("kernel hyperparameters"))
        }
    }

    fn matrix(&self, a: &[ModelParams], b: &[ModelParams]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(&a[i], &b[j]))
    }
}

/// Posterior mean and covariance at a set of queries.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// One joint draw of the error function over every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunctionSample {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<ModelParams>,
    targets: Vec<f64>,
    kernel: Kernel,
    noise: f64,
    jitter: f64,
    offset: f64,
    scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn standardize(targets: &[f64]) -> (f64, f64) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 * mean.abs().max(1.0) { std } else { 1.0 };
    (mean, scale)
}

/// Cholesky of `m + jitter * I`, escalating the jitter by 10x up to `max`.
fn factor_with_jitter(m: &DMatrix<f64>, base: f64, max: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = base;
    while jitter <= max * (1.0 + 1e-9) {
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(reg) {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}

impl GpModel {
    /// Fits the GP to `(points, targets)`. `noise` is the observation-noise
    /// variance relative to the target variance.
    pub fn fit(points: &[ModelParams], targets: &[f64], kernel: Kernel, noise: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if points.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                what: "GP targets",
                expected: points.len(),
                found: targets.len(),
            });
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "GP inputs",
                expected: dim,
                found: points.iter().map(|p| p.len()).find(|&l| l != dim).unwrap_or(dim),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) || points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("GP training data"));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::NonFinite("GP noise"));
        }
        kernel.validate(dim)?;

        let (offset, scale) = standardize(targets);
        let y = DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - offset) / scale));
        let mut k = kernel.matrix(points, points);
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let sv = kernel.signal_variance;
        let (chol, jitter) = factor_with_jitter(&k, JITTER * sv, MAX_JITTER * sv).ok_or_else(|| {
            Error::Factorization(format!(
                "training kernel matrix of {} points is not positive definite; near-duplicate inputs?",
                points.len()
            ))
        })?;
        let alpha = chol.solve(&y);
        Ok(Self {
            inputs: points.to_vec(),
            targets: targets.to_vec(),
            kernel,
            noise,
            jitter,
            offset,
            scale,
            chol,
            alpha,
        })
    }

    pub fn inputs(&self) -> &[ModelParams] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Jitter that made the training factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Prior mean in target units (the target average).
    pub fn prior_mean(&self) -> f64 {
        self.offset
    }

    /// Prior variance in target units.
    pub fn prior_variance(&self) -> f64 {
        self.kernel.signal_variance * self.scale * self.scale
    }

    /// Observation-noise variance in target units.
    pub fn noise_variance(&self) -> f64 {
        (self.noise + self.jitter) * self.scale * self.scale
    }

    fn check_queries(&self, queries: &[ModelParams]) -> Result<()> {
        let dim = self.kernel.lengthscales.len();
        if let Some(q) = queries.iter().find(|q| q.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "GP query",
                expected: dim,
                found: q.len(),
            });
        }
        Ok(())
    }

    /// Exact joint posterior at `queries`.
    pub fn posterior(&self, queries: &[ModelParams]) -> Result<Posterior> {
        self.check_queries(queries)?;
        let cross = self.kernel.matrix(&self.inputs, queries);
        let mean = (cross.transpose() * &self.alpha).map(|m| self.offset + self.scale * m);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a nonzero diagonal");
        let mut cov = self.kernel.matrix(queries, queries) - v.transpose() * &v;
        let s2 = self.scale * self.scale;
        let n = cov.nrows();
        for i in 0..n {
            for j in 0..i {
                let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]) * s2;
                cov[(i, j)] = avg;
                cov[(j, i)] = avg;
            }
            cov[(i, i)] *= s2;
        }
        Ok(Posterior { mean, cov })
    }

    /// Posterior mean and variance at a single point.
    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        let cross = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|p| self.kernel.eval(p, query)),
        );
        let mean = self.offset + self.scale * cross.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a nonzero diagonal");
        let var = (self.kernel.signal_variance - v.norm_squared()).max(0.0);
        (mean, var * self.scale * self.scale)
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_iterator(
            self.targets.len(),
            self.targets.iter().map(|t| (t - self.offset) / self.scale),
        );
        let n = y.len() as f64;
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Joint posterior over all grid points, factored for sampling.
    pub fn grid_sampler(&self, grid: &ModelGrid) -> Result<GridSampler> {
        if grid.len() > MAX_GRID_POINTS {
            return Err(Error::GridTooLarge {
                points: grid.len(),
                limit: MAX_GRID_POINTS,
            });
        }
        let post = self.posterior(grid.points())?;
        GridSampler::new(post.mean, post.cov, self.prior_variance())
    }
}

/// Posterior over the grid with a square-root factor of its covariance.
#[derive(Debug, Clone)]
pub struct GridSampler {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GridSampler {
    /// Factors `cov` by Cholesky with escalating jitter (relative to
    /// `reference_variance`), falling back to a clipped eigendecomposition.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, reference_variance: f64) -> Result<Self> {
        let factor = match factor_with_jitter(&cov, JITTER * reference_variance, MAX_JITTER * reference_variance) {
            Some((c, _)) => c.unpack(),
            None => {
                let eig = SymmetricEigen::new(cov.clone());
                if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Factorization("grid posterior covariance".into()));
                }
                let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                let mut u = eig.eigenvectors;
                for (j, s) in sqrt.iter().enumerate() {
                    u.column_mut(j).scale_mut(*s);
                }
                u
            }
        };
        Ok(Self { mean, cov, factor })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `n` joint draws as columns of a `G x n` matrix.
    pub fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let g = self.mean.len();
        let z = DMatrix::<f64>::from_fn(g, n, |_, _| rng.sample(StandardNormal));
        let mut out = &self.factor * z;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }
}

pub fn fit_gp(points: &[ModelParams], targets: &[f64], kernel: Kernel, noise: f64) -> Result<GpModel> {
    GpModel::fit(points, targets, kernel, noise)
}

pub fn gp_posterior(gp: &GpModel, queries: &[ModelParams]) -> Result<Posterior> {
    gp.posterior(queries)
}

/// `n` exact joint posterior draws over the grid, deterministic in `seed`.
pub fn sample_gp_on_grid(gp: &GpModel, grid: &ModelGrid, n: usize, seed: u64) -> Result<Vec<GridFunctionSample>> {
    if n == 0 {
        return Err(Error::config("n_mc", "number of samples must be at least 1"));
    }
    let sampler = gp.grid_sampler(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = sampler.draw(n, &mut rng);
    Ok(draws
        .column_iter()
        .map(|c| GridFunctionSample {
            values: c.iter().copied().collect(),
        })
        .collect())
}

/// Hyperparameter search bounds, relative to the grid extent.
const LENGTHSCALE_RANGE: (f64, f64) = (0.02, 5.0);
const SIGNAL_VARIANCE_RANGE: (f64, f64) = (0.05, 20.0);

/// Kernel plus observation noise (standardized units).
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub kernel: Kernel,
    pub noise: f64,
}

/// Maximizes the log marginal likelihood over the log-hyperparameters by
/// coordinate search from several starts. Returns the best setting found,
/// or `initial` if nothing beats it.
///
/// Lengthscales stay within a range relative to `extent` and above
/// `min_lengthscales`; the noise stays within `noise_range` and is held
/// fixed when the range is a single value.
pub fn optimize_hyperparameters(
    points: &[ModelParams],
    targets: &[f64],
    initial: &Hyperparameters,
    noise_range: [f64; 2],
    extent: &[f64],
    min_lengthscales: &[f64],
) -> Hyperparameters {
    let dim = initial.kernel.lengthscales.len();
    let fixed_noise = noise_range[0] >= noise_range[1] || noise_range[0] <= 0.0;
    let mut lo: Vec<f64> = std::iter::once(SIGNAL_VARIANCE_RANGE.0.ln())
        .chain(
            extent
                .iter()
                .zip(min_lengthscales)
                .map(|(e, m)| (LENGTHSCALE_RANGE.0 * e).max(m.min(LENGTHSCALE_RANGE.1 * e)).ln()),
        )
        .collect();
    let mut hi: Vec<f64> = std::iter::once(SIGNAL_VARIANCE_RANGE.1.ln())
        .chain(extent.iter().map(|e| (LENGTHSCALE_RANGE.1 * e).ln()))
        .collect();
    if !fixed_noise {
        lo.push(noise_range[0].ln());
        hi.push(noise_range[1].ln());
    }
    let to_hyper = |p: &[f64]| Hyperparameters {
        kernel: Kernel::new(p[0].exp(), p[1..=dim].iter().map(|v| v.exp()).collect()),
        noise: if fixed_noise { initial.noise } else { p[dim + 1].exp() },
    };
    let score = |p: &[f64]| -> f64 {
        let h = to_hyper(p);
        GpModel::fit(points, targets, h.kernel, h.noise)
            .map(|gp| gp.log_marginal_likelihood())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let clamp = |p: &mut [f64]| {
        for ((v, l), h) in p.iter_mut().zip(&lo).zip(&hi) {
            *v = v.clamp(*l, *h);
        }
    };

    let mut initial_p: Vec<f64> = std::iter::once(initial.kernel.signal_variance.ln())
        .chain(initial.kernel.lengthscales.iter().map(|l| l.ln()))
        .collect();
    if !fixed_noise {
        initial_p.push(initial.noise.max(noise_range[0]).ln());
    }
    clamp(&mut initial_p);
    let mut starts = vec![initial_p.clone()];
    for factor in [0.1f64, 0.3, 1.0] {
        let mut p: Vec<f64> = std::iter::once(0.0)
            .chain(extent.iter().map(|e| (factor * e).ln()))
            .collect();
        if !fixed_noise {
            p.push(noise_range[0].ln());
        }
        clamp(&mut p);
        starts.push(p);
    }

    let mut best_p = initial_p.clone();
    let mut best = score(&initial_p);
    for start in starts {
        let mut p = start;
        let mut f = score(&p);
        let mut delta = 1.0;
        while delta > 1e-2 {
            let mut improved = false;
            for d in 0..p.len() {
                for sign in [1.0, -1.0] {
                    let mut q = p.clone();
                    q[d] += sign * delta;
                    clamp(&mut q);
                    let fq = score(&q);
                    if fq > f + 1e-12 {
                        p = q;
                        f = fq;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                delta *= 0.5;
            }
        }
        if f > best {
            best = f;
            best_p = p;
        }
    }
    let mut out = to_hyper(&best_p);
    if best_p == initial_p {
        out = initial.clone();
    }
    out
}
