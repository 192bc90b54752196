use thiserror::Error;

use crate::data::DataError;
use crate::linalg::LinalgError;
use crate::nn::NnError;
use crate::optim::OptimError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("singular normal equations with ridge 0; use a positive ridge penalty")]
    SingularDesign,
    #[error("labels contain a single class; both -1 and +1 are required")]
    SingleClass,
    #[error("treatment arm t = {0} has no rows in the tuning split")]
    EmptyArm(i8),
    #[error("conditional variance estimate {value:e} at or below floor at point {index} (x = {x:?})")]
    OmegaFloor { index: usize, x: Vec<f64>, value: f64 },
    #[error("FiniteGMM stage {stage}: {source}")]
    GmmStage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("non-finite game objective at epoch {epoch}, batch {batch}")]
    NonFiniteGame { epoch: usize, batch: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
