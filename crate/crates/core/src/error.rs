use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Error type shared by the tensor engine, model and data pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes do not conform for the named primitive.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A primitive produced a non-finite value without saturation opted in.
    NonFinite { op: &'static str },
    /// A non-finite value appeared during a finite-difference probe.
    NonFiniteProbe { coordinate: usize },
    /// backward() called on a non-scalar value.
    BackwardNonScalar { len: usize },
    /// backward() called twice, or on an empty graph.
    BackwardReplay,
    BackwardEmptyGraph,
    /// Structural configuration violation, checked before any compute.
    InvalidConfig(String),
    /// Parameter gradient turned non-finite during an optimizer step.
    NonFiniteGradient { param: String },
    /// Data validation failure (parse-level errors carry a line number).
    InvalidData { line: Option<usize>, msg: String },
    /// A split or sampler was asked for windows it cannot produce.
    EmptyAnchorSet,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            CoreError::NonFinite { op } => write!(f, "non-finite result in {op}"),
            CoreError::NonFiniteProbe { coordinate } => {
                write!(f, "non-finite objective at probed coordinate {coordinate}")
            }
            CoreError::BackwardNonScalar { len } => {
                write!(f, "backward requires a scalar loss, got {len} elements")
            }
            CoreError::BackwardReplay => {
                write!(f, "backward called twice on the same recorded graph")
            }
            CoreError::BackwardEmptyGraph => write!(f, "backward on an empty graph"),
            CoreError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            CoreError::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter {param}")
            }
            CoreError::InvalidData { line, msg } => match line {
                Some(n) => write!(f, "invalid data at line {n}: {msg}"),
                None => write!(f, "invalid data: {msg}"),
            },
            CoreError::EmptyAnchorSet => write!(f, "no valid window anchors in range"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
