//! Optimisation of the weighted objective, its decomposition self-check, and
//! checkpoint persistence.

pub mod checkpoint;
pub mod loss;
pub mod trainer;
pub mod vlb;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure at epoch {epoch} batch {batch}: {detail}")]
    Numeric {
        detail: String,
        epoch: usize,
        batch: usize,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Ad(#[from] demogen_autodiff::AdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Attach batch coordinates to a numeric failure raised inside a worker.
    pub fn with_location(self, epoch: usize, batch: usize) -> Self {
        match self {
            TrainError::Numeric { detail, .. } => TrainError::Numeric {
                detail,
                epoch,
                batch,
            },
            other => other,
        }
    }
}
