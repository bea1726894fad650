use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("payload of {len} bytes exceeds capacity of {capacity} bytes")]
    CapacityExceeded { len: usize, capacity: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("format information unreadable")]
    FormatInfoUnreadable,
    #[error("too many codeword errors in block {block}")]
    RsUncorrectable { block: usize },
    #[error("malformed data segment: {0}")]
    MalformedData(String),
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error("payload leaves no free padding bits")]
    NoFreeBits,
    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),
    #[error("image codec: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error means "the symbol could not be read" as opposed to a
    /// caller mistake.
    pub fn is_unscannable(&self) -> bool {
        matches!(
            self,
            Error::FormatInfoUnreadable | Error::RsUncorrectable { .. } | Error::MalformedData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
