//! Box-constrained quasi-Newton minimization with central finite-difference
//! gradients.
//!
//! Directions come from a dense BFGS inverse-Hessian restricted to the free
//! variables; the step follows the projected path `clamp(x + αd)` with Armijo
//! backtracking. The parameter spaces here are tiny, so the dense update is
//! cheaper than keeping limited-memory pairs.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiNewton {
    /// Finite-difference step per dimension.
    pub fd_step: Vec<f64>,
    pub max_iterations: usize,
    /// Converged when the projected gradient's max-norm falls below this.
    pub gradient_tolerance: f64,
    /// Converged when an accepted step moves less than this fraction of `fd_step`.
    pub step_tolerance: f64,
    /// Length of a fresh first step as a fraction of the narrowest box side.
    pub initial_step: f64,
}

impl QuasiNewton {
    pub fn new(fd_step: Vec<f64>) -> Self {
        Self {
            fd_step,
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-3,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn project(x: &mut [f64], bounds: &[[f64; 2]]) {
    for (v, [lo, hi]) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

impl QuasiNewton {
    /// Minimizes `f` inside `bounds` starting from `x0`. `f` returns `None`
    /// when no further evaluations are allowed; the best point seen so far is
    /// returned in that case. Returns `None` only if `x0` itself could not be
    /// evaluated.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], bounds: &[[f64; 2]]) -> Option<Minimum>
    where
        F: FnMut(&[f64]) -> Option<f64>,
    {
        let n = x0.len();
        let mut evaluations = 0usize;
        let mut eval = |x: &[f64], evaluations: &mut usize| -> Option<f64> {
            *evaluations += 1;
            f(x)
        };

        let mut x = x0.to_vec();
        project(&mut x, bounds);
        let mut fx = eval(&x, &mut evaluations)?;
        if !fx.is_finite() {
            return Some(Minimum {
                x,
                value: fx,
                evaluations,
                converged: false,
            });
        }
        let done = |x: Vec<f64>, value: f64, evaluations: usize, converged: bool| {
            Some(Minimum {
                x,
                value,
                evaluations,
                converged,
            })
        };

        let mut h_inv = DMatrix::<f64>::identity(n, n);
        let mut fresh = true;
        let mut grad = match self.gradient(&mut eval, &mut evaluations, &x, bounds) {
            Some(g) => g,
            None => return done(x, fx, evaluations, false),
        };

        for iteration in 0..self.max_iterations {
            let active: Vec<bool> = (0..n)
                .map(|i| {
                    let [lo, hi] = bounds[i];
                    (x[i] <= lo && grad[i] > 0.0) || (x[i] >= hi && grad[i] < 0.0)
                })
                .collect();
            let pg = DVector::from_fn(n, |i, _| if active[i] { 0.0 } else { grad[i] });
            if pg.amax() < self.gradient_tolerance {
                return done(x, fx, evaluations, true);
            }

            let mut dir = -(&h_inv * &pg);
            for i in 0..n {
                if active[i] {
                    dir[i] = 0.0;
                }
            }
            if dir.dot(&pg) >= 0.0 {
                h_inv = DMatrix::identity(n, n);
                fresh = true;
                dir = -pg.clone();
            }
            let mut alpha = 1.0;
            if fresh {
                let span = bounds
                    .iter()
                    .map(|[lo, hi]| hi - lo)
                    .fold(f64::INFINITY, f64::min);
                alpha = (self.initial_step * span / dir.amax()).min(1.0);
            }

            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
                project(&mut trial, bounds);
                let decrease: f64 = trial.iter().zip(&x).zip(pg.iter()).map(|((t, a), g)| g * (t - a)).sum();
                let ft = match eval(&trial, &mut evaluations) {
                    Some(v) => v,
                    None => return done(x, fx, evaluations, false),
                };
                if ft.is_finite() && ft <= fx + ARMIJO * decrease && ft <= fx {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }

            let Some((next, f_next)) = accepted else {
                if fresh {
                    return done(x, fx, evaluations, true);
                }
                h_inv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            };

            let moved = next
                .iter()
                .zip(&x)
                .zip(&self.fd_step)
                .map(|((a, b), h)| (a - b).abs() / h)
                .fold(0.0, f64::max);
            // the gradient at the last iterate would go unused
            if iteration + 1 == self.max_iterations {
                return done(next, f_next, evaluations, moved < self.step_tolerance);
            }
            let g_next = match self.gradient(&mut eval, &mut evaluations, &next, bounds) {
                Some(g) => g,
                None => return done(next, f_next, evaluations, false),
            };
            let s = DVector::from_iterator(n, next.iter().zip(&x).map(|(a, b)| a - b));
            let y = &g_next - &grad;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                if fresh {
                    // Shanno-Phua initial scaling
                    h_inv *= sy / y.norm_squared();
                }
                let rho = 1.0 / sy;
                let i = DMatrix::<f64>::identity(n, n);
                let left = &i - rho * &s * y.transpose();
                let right = &i - rho * &y * s.transpose();
                h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
                fresh = false;
            }
            x = next;
            fx = f_next;
            grad = g_next;
            if moved < self.step_tolerance {
                return done(x, fx, evaluations, true);
            }
        }
        done(x, fx, evaluations, false)
    }

    fn gradient<E>(&self, eval: &mut E, evaluations: &mut usize, x: &[f64], bounds: &[[f64; 2]]) -> Option<DVector<f64>>
    where
        E: FnMut(&[f64], &mut usize) -> Option<f64>,
    {
        let n = x.len();
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let h = self.fd_step[i];
            let [lo, hi] = bounds[i];
            // shift the stencil inside the box rather than stepping outside
            let center = x[i].clamp(lo + h, hi - h);
            let center = if lo + h > hi - h { x[i] } else { center };
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] = center + h;
            minus[i] = center - h;
            let fp = eval(&plus, evaluations)?;
            let fm = eval(&minus, evaluations)?;
            g[i] = (fp - fm) / (2.0 * h);
            if !g[i].is_finite() {
                g[i] = 0.0;
            }
        }
        Some(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum_found() {
        let f = |x: &[f64]| Some(3.0 * (x[0] - 0.3).powi(2) + 0.5 * (x[1] + 1.2).powi(2) + (x[0] - 0.3) * (x[1] + 1.2));
        let opt = QuasiNewton::new(vec![1e-6, 1e-6]);
        let m = opt.minimize(f, &[2.0, 2.0], &[[-5.0, 5.0], [-5.0, 5.0]]).unwrap();
        assert!((m.x[0] - 0.3).abs() < 1e-8 && (m.x[1] + 1.2).abs() < 1e-8, "{:?}", m);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Some((x[0] - 3.0).powi(2) + (x[1] + 3.0).powi(2));
        let opt = QuasiNewton::new(vec![1e-6, 1e-6]);
        let m = opt.minimize(f, &[0.0, 0.0], &[[-1.0, 1.0], [-1.0, 1.0]]).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-9 && (m.x[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn stops_when_budget_runs_out() {
        let mut calls = 0;
        let f = |x: &[f64]| {
            calls += 1;
            (calls <= 7).then(|| x[0] * x[0])
        };
        let opt = QuasiNewton::new(vec![1e-6]);
        let m = opt.minimize(f, &[0.5], &[[-1.0, 1.0]]).unwrap();
        assert!(!m.converged);
        assert!(m.value <= 0.25);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| Some((x[0] * 7.0).sin() + (x[1] * 3.0).cos());
        let opt = QuasiNewton::new(vec![1e-5, 1e-5]);
        let start = [0.1, 0.2];
        let f0 = f(&start).unwrap();
        let m = opt.minimize(f, &start, &[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(m.value <= f0);
    }
}
