use thiserror::Error;

use crate::fock::Mode;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: bosonic factors need at least 2 levels")]
    InvalidDimension { dim: usize },

    #[error("composition error: {0}")]
    Composition(String),

    #[error("mode {0} is not part of the composite space")]
    UnknownMode(Mode),

    #[error(
        "Fock truncation at dim {dim} leaves weight {tail:.3e} beyond the cutoff; \
         need dim >= {required_dim}"
    )]
    TruncationInsufficient { dim: usize, tail: f64, required_dim: usize },

    #[error("flux bias {phi} is within 1e-9 of a cos(phi) = 0 singularity")]
    SingularBias { phi: f64 },

    #[error("drive equation has no steady state when kappa = 0 and delta = 0")]
    NoSteadyState,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("triple resonance violated: {0}")]
    TripleResonance(String),

    #[error(
        "stiff problem: rate x duration = {product:.3e} exceeds 1e4; \
         use the moment-dynamics engine or eliminate the qubit channel analytically"
    )]
    Stiff { product: f64 },

    #[error(
        "thermal influx of {quanta:.3e} quanta over the run exceeds 0.1; \
         the Fock truncation is not sized for thermal occupation"
    )]
    ThermalInflux { quanta: f64 },

    #[error("integration failure at t = {t:.6e} s: {reason}; retry with a smaller dt")]
    IntegrationFailure { t: f64, reason: String },

    #[error("state has {0} factors; reduce to a single bosonic mode first")]
    ReduceFirst(usize),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }
}
