//! Speaker-verification score backend.
//!
//! Scores trials between utterance embeddings and calibrates them with
//! consistency-measure-factor (CMF) scaling, adaptive score normalization
//! (AS-Norm), a logistic-regression quality measure function (QMF) and
//! multi-system fusion, then evaluates with EER and minDCF. A synthetic
//! corpus generator and a toy statistics-pooling embedder make the whole
//! chain runnable without a neural extractor.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod asnorm;
pub mod embedding;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod qmf;
pub mod scoring;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
