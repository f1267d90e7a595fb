//! File formats, corpus indexes, reports and the command-line interface
//! around `scenecam-core`.

pub mod atomic;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod format;
pub mod raster;
pub mod report;
pub mod wav;

pub use error::{Error, Result};
