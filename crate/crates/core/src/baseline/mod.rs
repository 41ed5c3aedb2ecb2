//! Feature-based competitor: hashed n-gram sentence features, a per-tag MLP
//! that locates the sentence holding the value, and a regular-expression
//! book that pulls the value out of that sentence.

pub mod extract;
pub mod featurize;
pub mod mlp;
pub mod regexbook;

pub use extract::{baseline_extract, train_baseline, BaselineConfig, BaselineModel};
pub use featurize::NgramFeaturizer;
pub use mlp::SentenceClassifier;
pub use regexbook::RegexBook;
