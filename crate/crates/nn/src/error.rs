use thiserror::Error;

/// Errors raised by graph construction, backward passes, optimizers and checkpoints.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected} tensor, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: invalid configuration: {detail}")]
    Config { op: &'static str, detail: String },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: graph is not acyclic (node {node} depends on {parent})")]
    Cycle { node: usize, parent: usize },
    #[error("optimizer: parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
