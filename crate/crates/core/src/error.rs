use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group spec: {0}")]
    InvalidGroup(String),

    #[error("group {0} is infinite and cannot be enumerated")]
    InfiniteGroup(String),

    #[error("tensor order {order} exceeds the configured ceiling {ceiling}")]
    OrderTooLarge { order: usize, ceiling: usize },

    #[error("invalid tensor type: {0}")]
    InvalidType(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("tensor conversion: {0}")]
    Conversion(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite value produced by op `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
