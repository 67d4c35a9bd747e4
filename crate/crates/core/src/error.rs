use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("coded stream truncated")]
    Truncated,
    #[error("conformance violation: {0}")]
    Conformance(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("bad container magic")]
    BadMagic,
    #[error("I/O error: {0}")]
    Io(String),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("block {index} at ({x},{y})")]
    Block {
        index: usize,
        x: u32,
        y: u32,
        #[source]
        source: Box<Error>,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn conformance(msg: impl Into<String>) -> Self {
        Error::Conformance(msg.into())
    }

    pub fn at_block(self, index: usize, x: u32, y: u32) -> Self {
        Error::Block { index, x, y, source: Box::new(self) }
    }
}
