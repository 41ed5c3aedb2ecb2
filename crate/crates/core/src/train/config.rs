//! Training-run configuration.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate. Zero is allowed and means "no updates" (useful
    /// for dry runs); the schedule scales it per step otherwise.
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub mlm_enabled: bool,
    pub clip_norm: f64,
    pub class_weights: Option<[f64; 3]>,
    /// Fixed length of packed sentence-pair inputs during pre-training.
    pub pretrain_seq_len: usize,
    /// Cap on consecutive-sentence slots sampled per document.
    pub pairs_per_doc: usize,
    /// Document window stride; `None` means the full window capacity
    /// (non-overlapping segments).
    pub stride: Option<usize>,
}

impl TrainConfig {
    pub fn pretrain(seed: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            epochs: 5,
            batch_size: 32,
            learning_rate: 5e-4,
            warmup_fraction: 0.1,
            seed,
            mlm_enabled: true,
            clip_norm: 1.0,
            class_weights: None,
            pretrain_seq_len: 64,
            pairs_per_doc: 12,
            stride: None,
        }
    }

    pub fn finetune(seed: u64) -> Self {
        Self {
            stage: Stage::Finetune,
            epochs: 20,
            batch_size: 32,
            learning_rate: 5e-4,
            warmup_fraction: 0.1,
            seed,
            mlm_enabled: true,
            clip_norm: 1.0,
            class_weights: None,
            pretrain_seq_len: 64,
            pairs_per_doc: 12,
            stride: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must not be negative".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0,1]".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|&x| x <= 0.0) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_stage() {
        let p = TrainConfig::pretrain(1);
        assert_eq!(p.epochs, 5);
        assert!(p.mlm_enabled);
        let f = TrainConfig::finetune(1);
        assert_eq!(f.epochs, 20);
        assert_eq!(f.clip_norm, 1.0);
        assert!((f.learning_rate - 5e-4).abs() < 1e-12);
        f.validate().unwrap();
    }

    #[test]
    fn validation_rejects_nonsense() {
        let mut c = TrainConfig::finetune(0);
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::finetune(0);
        c.class_weights = Some([1.0, 0.0, 1.0]);
        assert!(c.validate().is_err());
    }
}
