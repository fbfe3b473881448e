use alloc::string::String;

use crate::volume::Plane;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("slice index {index} out of range for {plane} plane (bound {bound})")]
    Bounds {
        plane: Plane,
        index: usize,
        bound: usize,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("step error: {0}")]
    Step(String),
    #[error("weight error: {0}")]
    Weight(String),
    #[error("no recorded noise for step {step}, {plane} plane, slice {index}")]
    Lookup {
        step: usize,
        plane: Plane,
        index: usize,
    },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
