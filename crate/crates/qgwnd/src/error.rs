use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum QgError {
    #[error("graph error: {0}")]
    Graph(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("coupling error: {0}")]
    Coupling(String),
    #[error("operator error: {0}")]
    Operator(String),
    #[error("propagation error: {0}")]
    Propagation(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("wavenumber {k} is a spectral point of the coupling (A + ikB singular)")]
    SpectralPoint { k: f64 },
    #[error("LAPACK {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QgError>;
