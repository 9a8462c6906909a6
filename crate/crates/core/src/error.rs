use thiserror::Error;

pub type Result<T> = std::result::Result<T, TrekError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrekError {
    #[error("joint dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: u128, cap: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown factor label `{0}`")]
    UnknownFactor(String),

    #[error("invalid factor partition: {0}")]
    InvalidPartition(String),

    #[error("basis outcome {index} has zero probability")]
    ZeroProbability { index: usize },

    #[error("operator is not Hermitian (max deviation {residual:.3e})")]
    NotHermitian { residual: f64 },

    #[error("operator is not unitary (max deviation {residual:.3e})")]
    NotUnitary { residual: f64 },

    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error(
        "time-reversal invariance precondition violated: |t H t^-1 - H|_max = {residual:.3e}; \
         forward-time emulation of the inverse evolution requires a time-reversal invariant Hamiltonian"
    )]
    TimeReversalViolated { residual: f64 },

    #[error("decomposition terms do not commute (max commutator norm {norm:.3e})")]
    NonCommuting { norm: f64 },

    #[error("pulse slot {0} is invalid for this register")]
    InvalidSlot(usize),

    #[error("pulse slot {0} has already been stored")]
    SlotAlreadyStored(usize),

    #[error("memory has already been teleported")]
    AlreadyTeleported,

    #[error("memory has not been teleported to Bob")]
    NotTeleported,

    #[error("memory holds no pulse-register contents")]
    MissingContents,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TrekError {
    fn from(e: std::io::Error) -> Self {
        TrekError::Io(e.to_string())
    }
}

impl From<csv::Error> for TrekError {
    fn from(e: csv::Error) -> Self {
        TrekError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for TrekError {
    fn from(e: serde_json::Error) -> Self {
        TrekError::Io(e.to_string())
    }
}
