use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid basis dimensions: n={n}, k={k}")]
    InvalidDimension { n: usize, k: usize },

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    #[error("{gate} gate does not preserve hamming weight; only the dense backend can apply it")]
    UnsupportedInSubspace { gate: &'static str },

    #[error("dense statevector supports at most {max} qubits, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot load a vector with norm below {floor:e} (got {norm:e})")]
    DegenerateVector { norm: f64, floor: f64 },

    #[error("cannot load a matrix with Frobenius norm below {floor:e}")]
    DegenerateMatrix { floor: f64 },

    #[error("{topology} loader requires a power-of-two dimension, got {d}")]
    TopologyDimension { topology: &'static str, d: usize },

    #[error("butterfly layout requires a power-of-two wire count, got {n}")]
    ButterflySize { n: usize },

    #[error("attention row {row} sums to zero; l1 normalization is undefined")]
    DegenerateAttentionRow { row: usize },

    #[error("sampling requires at least one shot")]
    NoShots,

    #[error("circuit deserialization failed: {0}")]
    BadCircuitJson(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
