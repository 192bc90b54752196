use serde::{Deserialize, Serialize};

use super::{check_gradient, OptimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Advances the moment estimates and returns the bias-corrected update
    /// `lr * m_hat / (sqrt(v_hat) + eps)` without applying it.
    pub fn update(&mut self, grad: &[f64]) -> Result<Vec<f64>, OptimError> {
        if grad.len() != self.m.len() {
            return Err(OptimError::ShapeMismatch {
                expected: self.m.len(),
                actual: grad.len(),
            });
        }
        check_gradient(grad)?;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut u = Vec::with_capacity(grad.len());
        for ((m, v), &g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            u.push(lr * m_hat / (v_hat.sqrt() + eps));
        }
        Ok(u)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), OptimError> {
        if params.len() != self.m.len() {
            return Err(OptimError::ShapeMismatch {
                expected: self.m.len(),
                actual: params.len(),
            });
        }
        let u = self.update(grad)?;
        for (p, du) in params.iter_mut().zip(&u) {
            *p -= du;
        }
        Ok(())
    }
}

/// Optimistic Adam: `params <- params - 2 u_t + u_{t-1}` where `u_t` is the
/// Adam update computed from the current gradient.
#[derive(Debug, Clone)]
pub struct OAdamState {
    adam: AdamState,
    prev_update: Vec<f64>,
}

impl OAdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self {
            adam: AdamState::new(dim, config),
            prev_update: vec![0.0; dim],
        }
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn previous_update(&self) -> &[f64] {
        &self.prev_update
    }

    pub fn set_previous_update(&mut self, u: Vec<f64>) {
        debug_assert_eq!(u.len(), self.prev_update.len());
        self.prev_update = u;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), OptimError> {
        if params.len() != self.prev_update.len() {
            return Err(OptimError::ShapeMismatch {
                expected: self.prev_update.len(),
                actual: params.len(),
            });
        }
        let u = self.adam.update(grad)?;
        for ((p, du), prev) in params.iter_mut().zip(&u).zip(&self.prev_update) {
            *p -= 2.0 * du - prev;
        }
        self.prev_update = u;
        Ok(())
    }
}
