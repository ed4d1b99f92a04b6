use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("loss variable was recorded on a different tape")]
    Detached,
    #[error("backward already ran on this tape; call reset_backward before running it again")]
    BackwardTwice,
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
