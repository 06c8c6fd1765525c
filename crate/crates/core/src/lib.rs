//! Visually grounded multilingual speech embeddings.
//!
//! Images and two untranscribed spoken captions (English and Hindi) are
//! mapped into one d-dimensional space by three convolutional encoders
//! trained with a margin ranking objective over in-batch imposters. The crate
//! covers the whole desk-scale pipeline: synthetic and manifest corpora,
//! log-mel and image frontends, encoders with hand-written backpropagation,
//! scenario losses, a seeded SGD trainer with a two-round step schedule,
//! and recall@k retrieval plus frame-level alignment analysis.

pub mod config;
pub mod corpus;
pub mod encoders;
mod error;
pub mod evaluation;
pub mod features;
pub mod frontends;
pub mod objectives;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
