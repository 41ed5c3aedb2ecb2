//! Architecture hyperparameters and the closed-form parameter census.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_position: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub dropout: f64,
    pub window_len: usize,
    /// `false` ablates the convolutional head: hidden states go straight to
    /// the 3-class classifier.
    pub conv_head: bool,
    /// Adds one hidden layer (ReLU) in front of the classifier.
    pub mlp_head: bool,
}

impl ModelConfig {
    /// Small preset used by every training run in the test suite.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 64,
            layers: 2,
            heads: 4,
            ff: 256,
            max_position: 128,
            conv_filters: 64,
            conv_width: 3,
            dropout: 0.1,
            window_len: 128,
            conv_head: true,
            mlp_head: false,
        }
    }

    /// Full-scale preset (BERT-base geometry, 384-token windows, 768 conv
    /// filters of width 3). Recorded for fidelity; too large to train here.
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 768,
            layers: 12,
            heads: 12,
            ff: 3072,
            max_position: 384,
            conv_filters: 768,
            conv_width: 3,
            dropout: 0.1,
            window_len: 384,
            conv_head: true,
            mlp_head: false,
        }
    }

    /// Downscaled geometry for the gradient-check command: same architecture,
    /// few enough parameters that central differences stay fast.
    pub fn gradcheck(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 12,
            layers: 2,
            heads: 2,
            ff: 24,
            max_position: 16,
            conv_filters: 12,
            conv_width: 3,
            dropout: 0.0,
            window_len: 16,
            conv_head: true,
            mlp_head: false,
        }
    }

    pub fn by_name(name: &str, vocab_size: usize) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(vocab_size)),
            "paper" => Ok(Self::paper(vocab_size)),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected toy or paper)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.conv_width % 2 == 0 {
            return Err(Error::Config(format!(
                "conv width must be odd, got {}",
                self.conv_width
            )));
        }
        if self.max_position < self.window_len {
            return Err(Error::Config(format!(
                "max_position {} smaller than window length {}",
                self.max_position, self.window_len
            )));
        }
        if self.vocab_size < 6 {
            return Err(Error::Config("vocabulary too small".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} out of range", self.dropout)));
        }
        Ok(())
    }

    /// Width of the classifier input: conv filters when the conv head is on,
    /// otherwise the hidden size.
    pub fn classifier_input(&self) -> usize {
        if self.conv_head {
            self.conv_filters
        } else {
            self.hidden
        }
    }

    /// Total trainable parameter count, derived independently of the
    /// parameter store (the census test requires both routes to agree).
    pub fn census(&self) -> usize {
        let (v, h, f) = (self.vocab_size, self.hidden, self.ff);
        let embeddings = v * h + 2 * h + self.max_position * h + 2 * h;
        // attention: wq+bq, wk (no bias), wv+bv, wo+bo
        let attn = 4 * h * h + 3 * h;
        let ffn = h * f + f + f * h + h;
        let norms = 4 * h;
        let per_layer = attn + ffn + norms;
        let conv = if self.conv_head {
            self.conv_width * h * self.conv_filters + self.conv_filters
        } else {
            0
        };
        let c_in = self.classifier_input();
        let classifier = if self.mlp_head {
            c_in * c_in + c_in + c_in * 3 + 3
        } else {
            c_in * 3 + 3
        };
        let nsp = h * 2 + 2;
        let mlm = h * v + v;
        embeddings + self.layers * per_layer + conv + classifier + nsp + mlm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::toy(1000).validate().unwrap();
        ModelConfig::paper(30000).validate().unwrap();
        ModelConfig::gradcheck(16).validate().unwrap();
    }

    #[test]
    fn gradcheck_preset_is_small() {
        let n = ModelConfig::gradcheck(16).census();
        assert!(n <= 5000, "gradcheck config has {n} parameters");
    }

    #[test]
    fn validation_catches_bad_geometry() {
        let mut c = ModelConfig::toy(1000);
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(1000);
        c.conv_width = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(1000);
        c.max_position = 64;
        assert!(c.validate().is_err());
    }
}
