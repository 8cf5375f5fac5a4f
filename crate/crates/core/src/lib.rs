//! Online sequential photometric calibration and joint
//! photometric-geometric pose refinement.
//!
//! The crate is organized bottom-up:
//!
//! - [`photometry`]: response, vignette and exposure types, frame rectification
//! - [`synth`]: ground-truth scene renderer used as an oracle
//! - [`tracker`]: corner detection, pyramidal tracking, correspondence pairs
//! - [`calibrator`]: response, vignette and exposure-validation estimators and
//!   the online state machine that freezes a calibration snapshot
//! - [`pose`]: photometric and geometric residuals, the joint energy and its
//!   coarse-to-fine optimizer
//! - [`eval`]: trajectory alignment, ATE and drift metrics
//! - [`io`]: dataset-compatible file formats
//! - [`cli`]: the `photocal` command-line front-end

pub mod calibrator;
pub mod cli;
pub mod camera;
pub mod eval;
pub mod error;
pub mod image;
pub mod io;
pub mod photometry;
pub mod pose;
pub mod robust;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
