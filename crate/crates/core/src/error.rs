use alloc::string::String;

/// Plane dimensions as `(channels, height, width)`.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{what}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Shape,
        found: Shape,
    },
    #[error("invalid plane dimensions {channels}x{height}x{width} ({len} values)")]
    InvalidDimensions {
        channels: usize,
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{name} out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("{window}x{window} window larger than {height}x{width} image")]
    WindowTooLarge { window: usize, height: usize, width: usize },
    #[error("non-positive disparity {value} at pixel (x={x}, y={y})")]
    NonPositiveDisparity { value: f64, x: usize, y: usize },
    #[error("class id {id} is not below the class count {classes}")]
    InvalidClass { id: usize, classes: usize },
    #[error("no valid pixels to evaluate")]
    NoValidPixels,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter layout mismatch: {0}")]
    ParameterMismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;
