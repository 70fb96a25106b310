use thiserror::Error;

/// Errors raised by the fedmap core library.
#[derive(Debug, Error)]
pub enum FedmapError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A gradient whose norm is zero (or numerically zero) where a direction is required.
    #[error("degenerate gradient: {0}")]
    DegenerateGradient(String),

    /// The mean first-layer bias partial is too small for the closed-form reconstruction.
    #[error("assumption violated: |mean bias partial| = {g_bar_abs:e} <= {threshold:e}")]
    AssumptionViolation { g_bar_abs: f64, threshold: f64 },

    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("selection produced an empty batch (round {round}, user {user})")]
    SelectionEmpty { round: usize, user: u32 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported latitude {0} (UTM covers -80..=84)")]
    UnsupportedLatitude(f64),

    #[error("dataset spans UTM zones {0} and {1}")]
    CrossZone(u8, u8),

    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FedmapError> = std::result::Result<T, E>;
