use thiserror::Error;

/// Errors surfaced by every layer of the codec.
#[derive(Debug, Error)]
pub enum NvcError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("non-finite value produced by `{layer}`")]
    NonFinite { layer: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty symbol range [{min}, {max}]")]
    EmptyRange { min: i32, max: i32 },

    #[error("alphabet of {0} symbols does not fit the table precision")]
    AlphabetTooLarge(usize),

    #[error("symbol {symbol} outside table range [{min}, {max}]")]
    SymbolOutOfRange { symbol: i32, min: i32, max: i32 },

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u16),

    #[error("header checksum mismatch")]
    HeaderChecksum,

    #[error("truncated stream")]
    Truncated,

    #[error("chunk order violation: {0}")]
    ChunkOrder(String),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<NvcError>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` requires completed stage `{missing}`")]
    MissingPrerequisite { stage: String, missing: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("rate-distortion curves: {0}")]
    Curve(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NvcError {
    /// Stable numeric code for each failure class, used by the CLI exit status.
    pub fn code(&self) -> u8 {
        match self {
            NvcError::Tensor(_) => 1,
            NvcError::NonFinite { .. } => 2,
            NvcError::Shape(_) => 3,
            NvcError::EmptyRange { .. } => 4,
            NvcError::AlphabetTooLarge(_) => 5,
            NvcError::SymbolOutOfRange { .. } => 6,
            NvcError::BadMagic => 10,
            NvcError::UnsupportedVersion(_) => 11,
            NvcError::HeaderChecksum => 12,
            NvcError::Truncated => 13,
            NvcError::ChunkOrder(_) => 14,
            NvcError::CorruptStream(_) => 15,
            NvcError::Frame { source, .. } => source.code(),
            NvcError::Config(_) => 20,
            NvcError::MissingPrerequisite { .. } => 21,
            NvcError::Checkpoint(_) => 22,
            NvcError::Curve(_) => 23,
            NvcError::Io(_) => 30,
            NvcError::Image(_) => 31,
            NvcError::Json(_) => 32,
            NvcError::Csv(_) => 33,
        }
    }

    pub(crate) fn in_frame(self, index: usize) -> NvcError {
        match self {
            e @ NvcError::Frame { .. } => e,
            e => NvcError::Frame {
                index,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, NvcError>;
