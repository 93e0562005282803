use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field violates its invariant. The message names the field.
    #[error("{0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("truncated record at byte offset {offset}: expected {expected} bytes, found {found}")]
    TruncatedRecord {
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("calibration constant missing or invalid in manifest {0}")]
    MissingCalibration(String),

    #[error("non-positive subcarrier power {power} at index {index} (noise floor violated)")]
    NonPositivePower { index: usize, power: f64 },

    #[error("too few samples: {got} samples for {components} components (need at least {need})")]
    TooFewSamples {
        got: usize,
        components: usize,
        need: usize,
    },

    #[error("unsupported significance level {alpha}; supported values: {supported}")]
    UnsupportedAlpha { alpha: f64, supported: String },

    #[error("channel sets differ between REM entries {a} and {b}")]
    ChannelMismatch { a: u64, b: u64 },

    #[error("nothing clustered")]
    NothingClustered,

    #[error("distance {d_m} m is below the reference distance {d0_m} m")]
    BelowReferenceDistance { d_m: f64, d0_m: f64 },

    #[error("channel never available (outage probability is 1)")]
    ChannelNeverAvailable,

    #[error("empty channel set")]
    EmptyChannelSet,

    #[error(
        "no feasible channel at route location {index} ({x:.3}, {y:.3}, {z:.3}): \
         minimum achievable outage {min_outage:.6e} exceeds p_max {p_max:.6e}"
    )]
    NoFeasibleChannel {
        index: usize,
        x: f64,
        y: f64,
        z: f64,
        min_outage: f64,
        p_max: f64,
    },

    #[error("scenario regions leave route distance [{from_m}, {to_m}) m uncovered")]
    RegionGap { from_m: f64, to_m: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
