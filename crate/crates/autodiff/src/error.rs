use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    /// Operation configured with incompatible shapes or parameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad runtime input (e.g. class target out of range).
    #[error("input error: {0}")]
    Input(String),
    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    NonFinite(String),
    /// Tape misuse: backward on an already-swept graph, unknown node id, etc.
    #[error("tape error: {0}")]
    Tape(String),
}
