//! Classification pipeline for small, imbalanced corpora of variably-sized images.
//!
//! The pipeline keeps every input image at its native resolution by padding to the
//! corpus-maximum dimensions (instead of resizing or cropping), equalizes class
//! counts by generating photometrically jittered copies of minority-class samples,
//! fine-tunes an ensemble of backbone classifiers with SGD, averages their softmax
//! probabilities at inference time, and scores predictions with per-class and
//! macro F1.
//!
//! Module map:
//! - [`corpus`] — loading image corpora, corpus statistics, stratified splits
//! - [`augment`] — padding to uniform size, jitter, class balancing
//! - [`nn`] — the small dense/conv layer library backing the classifiers
//! - [`model`] — backbone registry, classifier construction, softmax
//! - [`train`] — SGD fine-tuning, best-loss checkpoint selection, checkpoint io
//! - [`ensemble`] — probability-averaged inference
//! - [`eval`] — confusion matrices, F1 reports, submission files, ablations
//! - [`synth`] — synthetic corpus generator used by tests and benchmarks

pub mod augment;
pub mod corpus;
pub mod ensemble;
pub mod eval;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub mod tensor_io;

mod error;
mod label;
mod seed;

pub use error::{Error, Result};
pub use label::ClassLabel;
pub use seed::derive_seed;
