use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    ElementCount { shape: Vec<usize>, len: usize },

    #[error("{op}: shape mismatch, expected {expected}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("{0}")]
    Contract(String),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;

pub fn shape_err(op: &'static str, expected: impl Into<String>, got: &[usize]) -> DiffError {
    DiffError::Shape {
        op,
        expected: expected.into(),
        got: got.to_vec(),
    }
}
