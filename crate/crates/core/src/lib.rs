//! Acoustic scene classification from log-Mel "images".
//!
//! The crate covers the numeric side of the pipeline:
//!
//! - [`dsp`]: segmentation, STFT, Mel filterbank, log compression and
//!   per-bin normalization.
//! - [`enhance`]: Difference of Gaussians, Sobel magnitude and median-filter
//!   background drift removal.
//! - [`nn`]: the CNN-FC and CNN-GAP classifiers with backpropagation and SGD.
//! - [`cam`]: CAM and Grad-CAM maps and signed overlays.
//! - [`corpus`], [`eval`], [`experiment`], [`bench`]: a synthetic
//!   texture corpus, recording-level evaluation, experiment grids and the
//!   preprocessing timing harness.
//!
//! File formats and the command-line tool live in the `scenecam` crate.

pub mod bench;
pub mod cam;
pub mod corpus;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;

pub use error::{Error, Result};
