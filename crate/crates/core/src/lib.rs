//! Policy learning from observational data through the weighted logistic
//! surrogate-loss reduction.
//!
//! The crate provides
//!
//! * score estimation (IPS, DM, DR) from fitted nuisance models,
//! * empirical surrogate risk minimization ("ERM"),
//! * multi-stage FiniteGMM over a finite critic basis,
//! * the adversarial ESPRM estimator solved with optimistic Adam,
//! * synthetic scenarios with Monte-Carlo oracle policy values and the
//!   replicated benchmark protocol (regret, RMRR, parameter MSE).

pub mod config;
pub mod data;
pub mod error;
pub mod esprm;
pub mod experiment;
pub mod gmm;
pub mod linalg;
pub mod nn;
pub mod nuisance;
pub mod optim;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod surrogate;
pub mod training;

pub use data::{Dataset, ScoreKind, ScoredDataset, SplitPlan};
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use nn::{MlpSpec, ParamVector};
pub use rng::RngStream;
pub use surrogate::{FitStatus, PolicyClass, PolicyModel, Sign};
