use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("segment too short: {len} samples, need at least {needed}")]
    SegmentTooShort { len: usize, needed: usize },

    #[error("segment too short for WPE: {frames} frames, need more than {needed}")]
    SegmentTooShortForWpe { frames: usize, needed: usize },

    #[error("window/hop pair is not COLA-compliant (n_fft {n_fft}, hop {hop})")]
    NonCola { n_fft: usize, hop: usize },

    #[error("silent segment")]
    SilentSegment,

    #[error("no comparable energy between the two filters")]
    NoComparableEnergy,

    #[error("frequency bin count mismatch: {left} vs {right}")]
    BinMismatch { left: usize, right: usize },

    #[error("filter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("position {0:?} is outside the room")]
    OutsideRoom([f64; 3]),

    #[error("empty signal")]
    EmptySignal,

    #[error("empty timeline")]
    EmptyTimeline,

    #[error("nothing to score")]
    NothingToScore,

    #[error("recording id mismatch: {0} vs {1}")]
    RecordingMismatch(String, String),

    #[error("training needs at least {needed} pairs per class, got {same} same / {diff} diff")]
    NotEnoughPairs { needed: usize, same: usize, diff: usize },

    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
