//! Core numerics for the frequency-split demoireing pipeline.
//!
//! Everything in here is pure computation over `alloc`: a small reverse-mode
//! autodiff tensor engine, the fixed low/high frequency decomposition, the
//! dual-branch model with its channel-attention blocks, the two-stage trainer,
//! and the image metrics used to judge results. File formats, PNG handling and
//! the CLI live in the companion `demoire` crate.
//!
//! The crate builds without `std` (the `std` feature is on by default and only
//! forwards to dependencies); all floating point math goes through
//! `num-traits` + `libm` so behaviour is identical either way.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod blocks;
pub mod error;
pub mod freq;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod moire;
pub mod params;
pub mod shape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use shape::Shape;
pub use tensor::Tensor;
