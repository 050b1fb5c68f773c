//! File formats, training configs, experiment grids and the command-line
//! runner around `protoed-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod grid;
pub mod runlog;

pub use error::{Error, Result};
