use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied parameters violate a scheme precondition.
    #[error("invalid parameters: {0}")]
    Parameter(String),

    #[error("field element width mismatch: {0} vs {1}")]
    WidthMismatch(u32, u32),

    #[error("division by zero in GF(2^{0})")]
    DivisionByZero(u32),

    /// A query or answer that is well-framed but semantically invalid.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Bytes that cannot be parsed into the expected structure.
    #[error("malformed encoding: {0}")]
    Malformed(String),

    #[error("instance too large for enumeration: {0}")]
    Capacity(String),

    #[error("corrupted transcript: {0}")]
    CorruptedTranscript(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("connection failure: {0}")]
    Connection(String),

    /// An ERROR frame returned by a server.
    #[error("server error {code:#04x}: {message}")]
    Remote { code: u8, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }
}
