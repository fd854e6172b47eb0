//! Numerical core for masked video autoencoding with a frame (space) head and
//! a temporal-difference motion (time) head.
//!
//! The crate is `no_std` with `alloc`. Everything here is a pure function of
//! its inputs and seeds: tensors and reverse-mode differentiation, synthetic
//! clips and augmentations, cube tokenization and masking, reconstruction
//! targets, the encoder/decoder model, losses, the optimizer and schedule, and
//! the pixel buffers used for reconstruction figures. File formats, the
//! training loops that touch disk, and the command-line tool live in the
//! `motionmae` crate.

#![no_std]

extern crate alloc;

mod error;
pub mod evalviz;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod targets;
pub mod tokenizer;
pub mod training;
pub mod verify;
pub mod videodata;

pub use error::{Error, Result};
pub use numerics::{Scalar, Tape, Tensor, Var};
