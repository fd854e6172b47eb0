//! File formats, datasets and training runs on top of `motionmae-core`.
//!
//! Every file format here round-trips bit-exactly, and every run is a pure
//! function of its [`config::RunConfig`] and inputs.

mod bytes;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod ppm;
pub mod rawclip;
pub mod runner;

pub use error::{Error, Result};
