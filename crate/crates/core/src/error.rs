use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid score: {0}")]
    InvalidScore(String),

    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),

    #[error("unknown phoneme `{0}`")]
    UnknownPhoneme(String),

    #[error("score has no pitched note to anchor the F0 track")]
    NoPitchAnchor,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("invalid window set: {0}")]
    InvalidWindows(String),

    #[error("variance must be positive (found {value} at frame {frame}, dim {dim})")]
    NonPositiveVariance { frame: usize, dim: usize, value: f64 },

    #[error("non-positive pivot {value} at row {row}")]
    NonPositivePivot { row: usize, value: f64 },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid segment plan: {0}")]
    Plan(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("voiced frame {frame} has non-positive F0 {f0}")]
    NonPositiveF0 { frame: usize, f0: f64 },

    #[error("dropout probability {0} outside [0, 1)")]
    DropoutProbability(f64),
}
