//! Limited-memory BFGS with two-loop recursion and backtracking Armijo search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::linalg::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            tolerance: 1e-9,
            max_iterations: 500,
            armijo: 1e-4,
            backtrack: 0.5,
            max_line_search: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub params: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: LbfgsStatus,
}

impl LbfgsResult {
    pub fn is_degraded(&self) -> bool {
        self.status != LbfgsStatus::Converged
    }
}

/// Curvature pairs `(s, y, 1 / s.y)`, newest at the back.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    memory: usize,
    history: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsState {
    pub fn new(memory: usize) -> Self {
        Self {
            memory,
            history: VecDeque::with_capacity(memory),
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }

    /// Stores the pair unless it violates the curvature condition.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if self.memory == 0 || !(sy > 1e-12 * norm2(&s) * norm2(&y)) {
            return false;
        }
        if self.history.len() == self.memory {
            self.history.pop_front();
        }
        self.history.push_back((s, y, 1.0 / sy));
        true
    }

    /// `-H g` via the two-loop recursion with the usual `s.y / y.y` scaling.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y, rho) in self.history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in self.history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Minimizes `objective`, which returns `(loss, gradient)` at a point.
///
/// Never returns a loss above the loss at `x0`. A line search that cannot make
/// progress ends the run with [`LbfgsStatus::LineSearchFailed`] and the best
/// iterate found.
pub fn lbfgs_minimize<F>(mut objective: F, x0: Vec<f64>, config: &LbfgsConfig) -> Result<LbfgsResult, OptimError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (f0, g0) = objective(&x0);
    if !f0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteStart);
    }
    if g0.len() != x0.len() {
        return Err(OptimError::ShapeMismatch {
            expected: x0.len(),
            actual: g0.len(),
        });
    }
    let initial_loss = f0;
    let initial_x = x0.clone();
    let mut x = x0;
    let mut f = f0;
    let mut g = g0;
    let mut state = LbfgsState::new(config.memory);
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let gnorm = norm2(&g);
        if gnorm <= config.tolerance {
            status = LbfgsStatus::Converged;
            break;
        }
        iterations += 1;

        let mut d = state.direction(&g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            state.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = if state.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        // Near the optimum Armijo decreases fall below floating-point resolution
        // of f, so a step that keeps f within round-off and shrinks the
        // gradient is accepted as well.
        let f_noise = 4.0 * f64::EPSILON * f.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..config.max_line_search {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = objective(&trial);
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                let armijo = ft <= f + config.armijo * step * slope;
                let flat = ft <= f + f_noise && norm2(&gt) < gnorm;
                if armijo || flat {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= config.backtrack;
        }

        match accepted {
            Some((xn, fn_, gn)) => {
                let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                state.push(s, y);
                x = xn;
                f = fn_;
                g = gn;
            }
            None if !state.is_empty() => {
                // retry from steepest descent before giving up
                state.clear();
            }
            None => {
                status = LbfgsStatus::LineSearchFailed;
                break;
            }
        }
    }
    if status == LbfgsStatus::MaxIterations && norm2(&g) <= config.tolerance {
        status = LbfgsStatus::Converged;
    }
    if f > initial_loss {
        let (_, g0) = objective(&initial_x);
        return Ok(LbfgsResult {
            grad_norm: norm2(&g0),
            params: initial_x,
            loss: initial_loss,
            iterations,
            status: LbfgsStatus::LineSearchFailed,
        });
    }
    Ok(LbfgsResult {
        grad_norm: norm2(&g),
        params: x,
        loss: f,
        iterations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn quadratic_is_solved_quickly() {
        let target = [1.5, -2.0, 0.25, 4.0];
        let obj = |x: &[f64]| {
            let f = x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            let g = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            (f, g)
        };
        let cfg = LbfgsConfig {
            max_iterations: 20,
            ..Default::default()
        };
        let res = lbfgs_minimize(obj, vec![10.0, 3.0, -7.0, 0.0], &cfg).unwrap();
        assert_eq!(res.status, LbfgsStatus::Converged);
        for (p, t) in res.params.iter().zip(&target) {
            assert!((p - t).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let cfg = LbfgsConfig {
            tolerance: 1e-10,
            max_iterations: 2000,
            ..Default::default()
        };
        let res = lbfgs_minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert!((res.params[0] - 1.0).abs() < 1e-5, "{:?}", res);
        assert!((res.params[1] - 1.0).abs() < 1e-5, "{:?}", res);
    }

    #[test]
    fn nan_start_is_a_precondition_error() {
        let obj = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert_eq!(
            lbfgs_minimize(obj, vec![0.0], &LbfgsConfig::default()).unwrap_err(),
            OptimError::NonFiniteStart
        );
    }

    #[test]
    fn unbounded_objective_hits_iteration_limit_without_crash() {
        // softplus(-x) has no minimizer; the gradient only decays.
        let obj = |x: &[f64]| {
            let f = (1.0 + (-x[0]).exp()).ln();
            (f, vec![-1.0 / (1.0 + x[0].exp())])
        };
        let cfg = LbfgsConfig {
            max_iterations: 30,
            tolerance: 1e-300,
            ..Default::default()
        };
        let res = lbfgs_minimize(obj, vec![0.0], &cfg).unwrap();
        assert!(res.is_degraded());
        assert!(res.loss <= 2f64.ln());
    }

    #[test]
    fn history_respects_memory_and_curvature() {
        let mut st = LbfgsState::new(2);
        assert!(!st.push(vec![1.0], vec![-1.0]));
        assert!(st.push(vec![1.0], vec![1.0]));
        assert!(st.push(vec![1.0], vec![2.0]));
        assert!(st.push(vec![1.0], vec![3.0]));
        assert_eq!(st.len(), 2);
    }
}
