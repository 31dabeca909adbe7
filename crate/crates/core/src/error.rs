use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not antisymmetric: |M + M^T| = {residual:e} exceeds {tolerance:e}")]
    SymmetricInput { residual: f64, tolerance: f64 },

    #[error("gauge endomorphism is singular (condition estimate {condition:e})")]
    SingularGauge { condition: f64 },

    #[error("gauged structure matrix has symmetric residue {residual:e}")]
    GaugeAsymmetry { residual: f64 },

    #[error("conformal factor must be strictly positive, got {value}")]
    NonPositiveFactor { value: f64 },

    #[error("one-form does not annihilate the Hamiltonian vector fields (residual {residual:e})")]
    AnnihilationViolated { residual: f64 },

    #[error("degenerate denominator {denominator:e} in the Omega(K, gamma) inversion")]
    DegenerateDenominator { denominator: f64 },

    #[error("operation is not defined for constraint rank {rank}")]
    UnsupportedRank { rank: u8 },

    #[error("state left the finite range at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
