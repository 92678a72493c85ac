//! Graph collaborative filtering with Fourier KAN message transforms.
//!
//! The crate builds up from a small reverse-mode gradient engine
//! ([`tape`]) over dense tensors and CSR sparse operators, adds the KAN
//! message transforms ([`spline`], [`kan`]), the propagation model family
//! ([`model`]), BPR training ([`train`]), chronological evaluation
//! ([`eval`]), dataset plumbing ([`data`]), and an experiment driver
//! ([`experiment`]) behind the `fourier-gcf` binary.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod kan;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod spline;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
