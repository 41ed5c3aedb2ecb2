//! Span-based field extraction from long plain-text documents.
//!
//! Given a named field ("tag") and a document, the pipeline locates the span
//! of text holding that field's value. It is built from four layers:
//!
//! * [`tensor`] — dense arrays, differentiable ops, Adam, gradient checking
//! * [`text`] — tokenization, vocabulary, window packing, synthetic corpus
//! * [`model`] / [`train`] — a small bidirectional encoder with a convolutional
//!   span head, pre-trained with sentence-pair and masked-token objectives and
//!   fine-tuned on per-token start/end/irrelevant labels
//! * [`extract`] / [`baseline`] — span decoding, exact-match scoring, and a
//!   feature-based competitor (hashed n-grams + MLP + regex book)
//!
//! All randomness is seeded; every run is reproducible bit for bit. With the
//! `parallel` feature (on by default) batch-level loops run on rayon, with
//! results bitwise identical to the sequential fallback.

pub mod baseline;
pub mod error;
pub mod extract;
pub mod model;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
