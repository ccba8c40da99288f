use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("backward called on a node that does not belong to this tape")]
    ForeignNode,
    #[error("backward requires a 1x1 loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFiniteValue { op: &'static str, node: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("attention needs at least one key row")]
    EmptyKeys,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
