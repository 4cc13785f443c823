//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by construction, solving, and table I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation at construction time.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Threshold bounds ended up crossed or non-finite where finiteness is
    /// required.
    #[error("inconsistent threshold bounds: lower {lb} vs upper {ub}")]
    InconsistentBounds { lb: f64, ub: f64 },

    /// The root objective has no sign change on the search interval, so the
    /// channel admits no interior optimum.
    #[error("no sign change when bracketing the root (objective at lower end = {value}); channel is degenerate")]
    NoSignChange { value: f64 },

    /// A regression had too few points or a constant regressor.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Paired comparison inputs do not carry the same seed set.
    #[error("tables are not seed-paired: {0}")]
    UnpairedSeeds(String),

    /// Refusal to aggregate or compare runs from different channel setups.
    #[error("tables come from different channel configurations: {0}")]
    MixedChannels(String),

    /// A CSV table is missing or carries the wrong format banner.
    #[error("table format: {0}")]
    TableFormat(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidParameter`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
