use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor or clip extents do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),
    /// Token layout inconsistency (positions, segments, mask sizes).
    #[error("layout error: {0}")]
    Layout(String),
    /// A NaN or infinity showed up where a finite value is required.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Malformed serialized data.
    #[error("format error: {0}")]
    Format(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
