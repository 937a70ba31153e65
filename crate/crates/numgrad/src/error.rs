use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dimension error in {op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("index error in {op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("determinism error: repeated evaluation gave {first} then {second}")]
    Determinism { first: f64, second: f64 },
}

pub type Result<T> = std::result::Result<T, NumError>;
