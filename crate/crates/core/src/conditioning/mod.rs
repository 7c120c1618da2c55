//! Post-training alignment of labels with latent regions and
//! label-conditioned generation.

pub mod sample;
pub mod table;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CondError {
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("degenerate label: {0}")]
    DegenerateLabel(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
