use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {expected:?} vs {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument to {op}: {reason}")]
    Argument { op: &'static str, reason: String },

    #[error("weights archive: {0}")]
    Archive(String),
}
