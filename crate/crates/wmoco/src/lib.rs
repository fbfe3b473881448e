//! File formats, motion simulation, and experiment plumbing around
//! [`wmoco_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod motion;
pub mod pipeline;
pub mod store;

pub use error::{Error, Result};
