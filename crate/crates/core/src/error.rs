use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("vector has zero or non-finite norm")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("frame columns are not orthonormal (max deviation {0:e})")]
    NonOrthonormalFrame(f64),

    #[error("rotation axes are not orthonormal (max deviation {0:e})")]
    NonOrthonormalAxis(f64),

    #[error("point is orthogonal to the projection plane (|U^T x| = {0:e})")]
    DegenerateProjection(f64),

    #[error("Gram-Schmidt broke down after {0} resamples")]
    GramSchmidtBreakdown(usize),

    #[error("density only available on S^2 (d = 3), got d = {0}")]
    UnsupportedDimension(usize),

    #[error("negative or non-finite concentration {0}")]
    InvalidKappa(f64),

    #[error("mixture weights must be positive and sum to 1 (sum = {0})")]
    InvalidMixtureWeights(f64),

    #[error("empirical measure has no atoms")]
    EmptyMeasure,

    #[error("atom counts differ: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("brute force limited to {max} atoms, got {got}")]
    TooLarge { max: usize, got: usize },

    #[error("shift search did not converge within {0} steps")]
    NonConvergence(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("non-finite particle update at step {step} (particle {particle})")]
    NonFiniteUpdate { step: usize, particle: usize },

    #[error("non-finite potential gradient at particle {0}")]
    NonFinitePotential(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Whether the error comes from numerics rather than from invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateProjection(_)
                | Error::GramSchmidtBreakdown(_)
                | Error::NonConvergence(_)
                | Error::NonFiniteLoss(_)
                | Error::NonFiniteUpdate { .. }
                | Error::NonFinitePotential(_)
                | Error::ZeroNorm
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
