//! The encoder-plus-convolution network: embeddings, transformer blocks,
//! span head, and the two pre-training heads.

pub mod config;
pub mod forward;
pub mod params;
pub mod verify;

#[cfg(test)]
mod tests;

pub use config::ModelConfig;
pub use forward::{Batch, PretrainBatch};
pub use params::{ModelParams, TrainScope};
