use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("Nyquist violation: {0}")]
    Nyquist(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("missing harmonic {0}")]
    MissingHarmonic(usize),

    #[error("{0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_check(expected: &[usize], got: &[usize]) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        });
    }
    Ok(())
}
