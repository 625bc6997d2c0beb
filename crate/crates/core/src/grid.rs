//! Regular discretization of the parameter space.
//!
//! Grid points sit at cell centers, so every point lies strictly inside the
//! bounds and each point owns the box of half a spacing around it. Points are
//! enumerated row-major with the last dimension varying fastest.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, SystemSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    bounds: Vec<[f64; 2]>,
    resolution: Vec<usize>,
    points: Vec<ModelParams>,
}

impl ModelGrid {
    pub fn new(bounds: Vec<[f64; 2]>, resolution: Vec<usize>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != resolution.len() {
            return Err(Error::DimensionMismatch {
                what: "grid resolution",
                expected: bounds.len(),
                found: resolution.len(),
            });
        }
        for (i, ([lo, hi], n)) in bounds.iter().zip(&resolution).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) || *n == 0 {
                return Err(Error::config(
                    format!("grid.bounds[{i}]"),
                    format!("need lower < upper and resolution >= 1, got [{lo}, {hi}] x {n}"),
                ));
            }
        }
        let total: usize = resolution.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; bounds.len()];
        for _ in 0..total {
            let theta = idx
                .iter()
                .zip(&bounds)
                .zip(&resolution)
                .map(|((&i, [lo, hi]), &n)| lo + (i as f64 + 0.5) * (hi - lo) / n as f64)
                .collect();
            points.push(ModelParams(theta));
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < resolution[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            bounds,
            resolution,
            points,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(spec.bounds.clone(), spec.resolution.clone())
    }

    /// Grid whose cells are centered on `center` with the given per-dimension
    /// spacing, `resolution` cells per side.
    pub fn centered(center: &[f64], spacing: &[f64], resolution: usize) -> Result<Self> {
        let half = resolution as f64 / 2.0;
        let bounds = center
            .iter()
            .zip(spacing)
            .map(|(c, s)| [c - half * s, c + half * s])
            .collect();
        Self::new(bounds, vec![resolution; center.len()])
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            bounds: self.bounds.clone(),
            resolution: self.resolution.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn points(&self) -> &[ModelParams] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &ModelParams {
        &self.points[index]
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(&self.resolution)
            .map(|([lo, hi], &n)| (hi - lo) / n as f64)
            .collect()
    }

    pub fn extent(&self) -> Vec<f64> {
        self.bounds.iter().map(|[lo, hi]| hi - lo).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect()
    }

    /// Box of half a spacing around grid point `index`.
    pub fn cell_bounds(&self, index: usize) -> Vec<[f64; 2]> {
        self.points[index]
            .iter()
            .zip(self.spacing())
            .map(|(c, s)| [c - 0.5 * s, c + 0.5 * s])
            .collect()
    }

    /// Index of the cell containing `theta`, if it lies within the grid.
    pub fn cell_of(&self, theta: &[f64]) -> Option<usize> {
        if theta.len() != self.dim() {
            return None;
        }
        let mut index = 0;
        for ((v, [lo, hi]), &n) in theta.iter().zip(&self.bounds).zip(&self.resolution) {
            if !(*v >= *lo && *v <= *hi) {
                return None;
            }
            let i = (((v - lo) / (hi - lo)) * n as f64).floor() as usize;
            index = index * n + i.min(n - 1);
        }
        Some(index)
    }

    /// Largest per-dimension distance between `a` and `b`, in units of grid spacing.
    pub fn cells_apart(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(self.spacing())
            .map(|((x, y), s)| (x - y).abs() / s)
            .fold(0.0, f64::max)
    }

    pub fn check_against(&self, spec: &SystemSpec) -> Result<()> {
        if self.dim() != spec.param_dim() {
            return Err(Error::DimensionMismatch {
                what: "grid dimension",
                expected: spec.param_dim(),
                found: self.dim(),
            });
        }
        for (d, ([lo, hi], [plo, phi])) in self.bounds.iter().zip(&spec.param_bounds).enumerate() {
            if lo < plo || hi > phi {
                return Err(Error::config(
                    format!("grid.bounds[{d}]"),
                    format!("[{lo}, {hi}] leaves the system bounds [{plo}, {phi}]"),
                ));
            }
        }
        Ok(())
    }
}
