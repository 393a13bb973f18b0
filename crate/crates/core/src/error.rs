use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value produced: {0}")]
    NonFinite(String),

    #[error("diffusion coefficient C is zero; use the deterministic drift instead")]
    DegenerateDiffusion,

    #[error("limit denominator ∫Y² − (∫Y)² = {0} is not positive")]
    DegenerateDenominator(f64),

    #[error("quadrature step too coarse: moment {order} has estimated relative error {rel_error:e}")]
    StepTooCoarse { order: usize, rel_error: f64 },

    #[error("transformed estimate is absent (H_n fails or rho_hat <= 0)")]
    MissingEstimate,

    #[error("operation requires the pure immigration regime (C = 0)")]
    RequiresPureImmigration,

    #[error("immigration mean beta_tilde is zero")]
    DegenerateImmigration,

    #[error("need at least {need} observations after X_0, got {got}")]
    TooFewObservations { need: usize, got: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics themselves, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::DegenerateDiffusion
                | Error::DegenerateDenominator(_)
                | Error::StepTooCoarse { .. }
                | Error::MissingEstimate
        )
    }
}
