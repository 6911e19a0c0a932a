use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate fit: design matrix is rank deficient along {direction} (condition number {condition:.3e})")]
    DegenerateFit { direction: String, condition: f64 },

    #[error("timestamp {timestamp} is outside the base station coverage [{start}, {end}]")]
    OutOfRange { timestamp: f64, start: f64, end: f64 },

    #[error("no overlap: no correspondence within {max_dist} m")]
    NoOverlap { max_dist: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scan from pose at {0:?} sees no surface")]
    EmptyScan([f64; 3]),

    #[error("trajectory association failed: {0}")]
    Association(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} is not finite ({value})")))
    }
}
