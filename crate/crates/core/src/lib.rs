//! Allocation-only core of a spatio-temporal graph attention forecaster for
//! food-delivery demand and origin-destination (OD) flows.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//! gridding, slot discretization, OD aggregation, the attention model with a
//! small reverse-mode tape, training, metrics, baselines and a synthetic order
//! generator. File formats, configuration and the command line live in the
//! companion `stgat` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geo;
pub mod gradcheck;
pub mod ingest;
pub mod model;
pub mod params;
pub mod spatial;
pub mod synth;
pub mod tape;
pub mod temporal;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::Tensor2;
