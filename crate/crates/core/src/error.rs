use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },
    #[error("qubit {0} appears more than once among targets and controls")]
    OverlappingQubits(usize),
    #[error("parameter slot {slot} not present (parameter vector has {len} entries)")]
    MissingParameter { slot: usize, len: usize },
    #[error("attribute {index} not present (instance has {len} attributes)")]
    MissingAttribute { index: usize, len: usize },
    #[error("invalid gate: {0}")]
    InvalidGate(String),
    #[error("engine supports at most {max} qubits, got {got}")]
    TooManyQubits { got: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("operation requires a measurement-free (deferred) model")]
    NotDeferred,
    #[error("gate kind {0} has no rotation generator and cannot be differentiated")]
    NonDifferentiable(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("frame error: {0}")]
    Frame(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
