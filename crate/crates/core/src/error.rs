use thiserror::Error;

/// Errors produced by the matrix kernel, generator algebra, certification
/// and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hermitian (max |A - A^dag| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("not a density matrix: {0}")]
    NotDensity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("basis is not orthonormal (max Gram deviation = {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("restriction is not Hurwitz (spectral abscissa = {abscissa:e})")]
    NotHurwitz { abscissa: f64 },

    #[error("invalid Kraus set for event at t = {time}: max |sum K^dag K - I| = {deviation:e}")]
    InvalidKraus { time: f64, deviation: f64 },

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("eigen decomposition did not converge")]
    NoConvergence,
}

pub type Result<T> = std::result::Result<T, Error>;
