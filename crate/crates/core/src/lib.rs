//! Learn fixed-length vectors for spoken-word audio segments with a
//! skip-gram sequence-to-sequence LSTM, and score word-vector tables on
//! word-similarity benchmarks.
//!
//! The pipeline is staged: [`dsp`] turns audio into MFCC frames, [`corpus`]
//! cuts frames into word segments and builds skip-gram examples, [`trainer`]
//! fits the [`nn`] encoder/decoder by SGD, [`embeddings`] averages encoder
//! outputs per word, and [`wordsim`] evaluates the resulting table.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod corpus;
pub mod dsp;
pub mod embeddings;
pub mod error;
pub mod nn;
pub mod parallel;
pub mod real;
pub mod sequence;
pub mod synthetic;
pub mod trainer;
pub mod wordsim;

pub use error::{Error, Result};
pub use real::{Precision, Real};
pub use sequence::FeatureSequence;
