//! Adam refinement with validation early stopping, shared by ERM and the
//! neural nuisance models.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim::{AdamConfig, AdamState, EarlyStop, StopDecision};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamRefine {
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Rows per step; `None` means one full-batch step per epoch.
    pub batch_size: Option<usize>,
}

impl Default for AdamRefine {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            patience: EarlyStop::DEFAULT_PATIENCE,
            max_epochs: 500,
            batch_size: Some(256),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub params: Vec<f64>,
    pub initial_validation: f64,
    pub best_validation: f64,
    pub epochs: usize,
}

/// Runs Adam epochs over shuffled mini-batches of `n_train` rows and returns
/// the iterate with the lowest validation loss, the starting point included.
pub fn refine_with_adam(
    start: Vec<f64>,
    n_train: usize,
    mut train: impl FnMut(&[f64], Option<&[usize]>) -> (f64, Vec<f64>),
    mut validate: impl FnMut(&[f64]) -> f64,
    settings: &AdamRefine,
    rng: &mut RngStream,
) -> Result<RefineOutcome> {
    let mut params = start;
    let mut best = params.clone();
    let mut stopper = EarlyStop::new(settings.patience);
    let initial_validation = validate(&params);
    stopper.observe(initial_validation);
    let mut adam = AdamState::new(params.len(), AdamConfig::with_lr(settings.lr));
    let batch = settings.batch_size.unwrap_or(n_train).clamp(1, n_train.max(1));
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epochs = 0;
    while epochs < settings.max_epochs {
        epochs += 1;
        if batch >= n_train {
            let (_, g) = train(&params, None);
            adam.step(&mut params, &g)?;
        } else {
            rng.shuffle(&mut order);
            for chunk in order.chunks(batch) {
                let (_, g) = train(&params, Some(chunk));
                adam.step(&mut params, &g)?;
            }
        }
        match stopper.observe(validate(&params)) {
            StopDecision::Improved => best.clone_from(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(RefineOutcome {
        params: best,
        initial_validation,
        best_validation: stopper.best(),
        epochs,
    })
}
