//! Text handling: tokenization, vocabulary, corpus files, window packing,
//! and the deterministic synthetic-corpus generator.
//!
//! All character offsets throughout this module count Unicode scalar values,
//! not bytes.

pub mod corpus;
pub mod generate;
pub mod pretrain;
pub mod tokenize;
pub mod vocab;
pub mod window;

pub use corpus::{AnnotatedDocument, Corpus, DType, GoldSpan, TagSpec};
pub use tokenize::{char_slice, tokenize, Token};
pub use vocab::Vocab;
pub use window::{align_labels, window_document, PackedWindow, LABEL_IGNORE};
