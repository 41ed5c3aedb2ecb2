//! Two-stage optimization: self-supervised pre-training over corpus text,
//! then span fine-tuning, with checkpointing and seeded determinism.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod finetune;
pub mod pretrain;
pub mod schedule;


pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{Stage, TrainConfig};
pub use data::{build_finetune_windows, build_pretrain_examples, build_vocab};
pub use finetune::run_finetune;
pub use pretrain::run_pretraining;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Training log sink: line-oriented records on stdout and optionally a file.
pub struct Logger {
    echo: bool,
    file: Option<BufWriter<File>>,
}

impl Logger {
    pub fn stdout() -> Self {
        Self {
            echo: true,
            file: None,
        }
    }

    pub fn quiet() -> Self {
        Self {
            echo: false,
            file: None,
        }
    }

    pub fn with_file(path: &Path, echo: bool) -> crate::Result<Self> {
        Ok(Self {
            echo,
            file: Some(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn line(&mut self, text: &str) {
        if self.echo {
            println!("{text}");
        }
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{text}");
        }
    }

    pub fn flush(&mut self) {
        if let Some(f) = &mut self.file {
            let _ = f.flush();
        }
    }
}

/// Seeded permutation of `0..n`: the batch order for one epoch. Every epoch
/// visits the full dataset exactly once.
pub fn epoch_order(n: usize, seed: u64, purpose: &str, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(sub_seed(seed, purpose, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Mix a purpose tag and counter into a base seed so each random stream is
/// independent but fully determined.
pub fn sub_seed(seed: u64, purpose: &str, k: u64) -> u64 {
    let mut h = crate::text::corpus::fnv1a(purpose.as_bytes());
    h ^= seed;
    h = h.wrapping_mul(0x100000001b3);
    h ^= k;
    h.wrapping_mul(0x100000001b3)
}
