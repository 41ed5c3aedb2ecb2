//! Span fine-tuning: 3-class per-token cross-entropy over every
//! (document, tag) window of the training split.

use super::checkpoint::{ensure_compatible, save_checkpoint_atomic, Checkpoint, CheckpointMeta};
use super::config::TrainConfig;
use super::data::{build_finetune_windows, build_vocab, TRAIN_FRACTION};
use super::pretrain::TrainOutcome;
use super::schedule::lr_scale;
use super::{sub_seed, Logger};
use crate::model::{Batch, ModelConfig, ModelParams, TrainScope};
use crate::tensor::adam::{clip_global_norm, Adam, AdamConfig};
use crate::tensor::ops::cross_entropy_loss;
use crate::text::corpus::Corpus;
use crate::text::window::{PackedWindow, LABEL_IGNORE};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Initial parameters for a fine-tuning run.
pub enum FinetuneInit {
    /// Random initialization from the run seed.
    Fresh,
    /// Start from a pre-trained checkpoint. The span head may differ from
    /// the stored config (conv ablation, MLP variant); shared parts are
    /// copied, the head is freshly initialized.
    From(Box<Checkpoint>),
}

/// Copy embeddings, encoder, and pre-training heads from `stored` into a
/// parameter set shaped by `target_cfg`; the span head keeps its fresh
/// initialization. Errors name the first incompatible config field.
pub fn adapt_checkpoint(
    stored: &Checkpoint,
    target_cfg: &ModelConfig,
    seed: u64,
) -> Result<ModelParams<f32>> {
    ensure_compatible(&stored.config, target_cfg)?;
    let mut params = ModelParams::<f32>::init(target_cfg, seed)?;
    for src in stored.params.ordered() {
        if src.name.starts_with("head.") && stored.config.classifier_input() != target_cfg.classifier_input() {
            continue; // ablated or widened head: keep fresh values
        }
        match params.by_name_mut(&src.name) {
            Some(dst) if dst.value.shape() == src.value.shape() => {
                dst.value.data_mut().copy_from_slice(src.value.data());
            }
            Some(dst) => {
                return Err(Error::Incompatible(format!(
                    "parameter {} has shape {:?} in checkpoint but {:?} requested",
                    src.name,
                    src.value.shape(),
                    dst.value.shape()
                )));
            }
            None => {
                // Present in the checkpoint, absent in the target (conv
                // kernels under --no-conv): skip.
                if !src.name.starts_with("head.") {
                    return Err(Error::Incompatible(format!(
                        "checkpoint parameter {} has no slot in the requested model",
                        src.name
                    )));
                }
            }
        }
    }
    Ok(params)
}

/// Fine-tune over the corpus's training split and return the checkpoint plus
/// per-step losses. The pre-training heads never enter the optimizer, so
/// their bytes are unchanged afterwards.
pub fn run_finetune(
    corpus: &Corpus,
    init: FinetuneInit,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    logger: &mut Logger,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let (train_idx, _) = corpus.split(TRAIN_FRACTION);
    let vocab = build_vocab(corpus, &train_idx);
    let mut model_cfg = model_cfg.clone();
    model_cfg.vocab_size = vocab.len();

    let params = match init {
        FinetuneInit::Fresh => ModelParams::<f32>::init(&model_cfg, cfg.seed)?,
        FinetuneInit::From(ckpt) => {
            if ckpt.meta.vocab != vocab.tokens() {
                return Err(Error::Incompatible(format!(
                    "checkpoint vocabulary has {} tokens, corpus implies {}; \
                     fine-tuning must reuse the pre-training corpus split",
                    ckpt.meta.vocab.len(),
                    vocab.len()
                )));
            }
            adapt_checkpoint(&ckpt, &model_cfg, cfg.seed)?
        }
    };

    let windows =
        build_finetune_windows(corpus, &train_idx, &vocab, model_cfg.window_len, cfg.stride)?;
    logger.line(&format!(
        "stage=finetune docs={} windows={} vocab={} epochs={}",
        train_idx.len(),
        windows.len(),
        vocab.len(),
        cfg.epochs
    ));
    train_finetune_loop(params, vocab.tokens().to_vec(), windows, cfg, logger, checkpoint_path)
}

pub fn train_finetune_loop(
    mut params: ModelParams<f32>,
    vocab_tokens: Vec<String>,
    windows: Vec<PackedWindow>,
    cfg: &TrainConfig,
    logger: &mut Logger,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    if windows.is_empty() {
        return Err(Error::Corpus("no fine-tuning windows built".into()));
    }
    let class_weights: Option<[f32; 3]> = cfg
        .class_weights
        .map(|w| [w[0] as f32, w[1] as f32, w[2] as f32]);
    let mut adam = Adam::new(AdamConfig {
        lr: if cfg.learning_rate > 0.0 {
            cfg.learning_rate
        } else {
            1.0
        },
        ..AdamConfig::default()
    })?;
    let steps_per_epoch = windows.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "dropout", 1));
    let mut step_losses = Vec::new();
    let mut loss_history = Vec::new();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let order = super::epoch_order(windows.len(), cfg.seed, "finetune-shuffle", epoch);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            global_step += 1;
            let refs: Vec<&PackedWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let batch = Batch::from_windows(&refs);
            let (logits, cache) = params.span_forward(&batch, Some(&mut dropout_rng))?;
            let (loss, dlogits) = cross_entropy_loss(
                &logits,
                &batch.span_labels,
                class_weights.as_ref().map(|w| w.as_slice()),
                Some(LABEL_IGNORE),
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    step,
                    msg: "loss is not finite".into(),
                });
            }
            params.span_backward(&batch, &cache, &dlogits)?;
            if cfg.learning_rate > 0.0 {
                let mut trainable = params.trainable_mut(TrainScope::Finetune);
                clip_global_norm(&mut trainable, cfg.clip_norm);
                let scale = lr_scale(global_step, total_steps, cfg.warmup_fraction);
                adam.step(&mut trainable, scale).map_err(|e| match e {
                    Error::NonFinite(what) => Error::Numeric {
                        epoch,
                        step,
                        msg: what,
                    },
                    other => other,
                })?;
            }
            params.zero_grads();
            epoch_loss += loss as f64;
            step_losses.push(loss as f64);
            logger.line(&format!("epoch={epoch} step={step} loss={loss:.6}"));
        }
        let mean = epoch_loss / steps_per_epoch as f64;
        loss_history.push(mean);
        logger.line(&format!("epoch={epoch} mean_loss={mean:.6}"));
        if let Some(path) = checkpoint_path {
            let meta = CheckpointMeta {
                stage: "finetune".into(),
                epoch: epoch + 1,
                seed: cfg.seed,
                loss_history: loss_history.clone(),
                vocab: vocab_tokens.clone(),
            };
            save_checkpoint_atomic(&params, &meta, None, path)?;
        }
    }
    logger.flush();

    let meta = CheckpointMeta {
        stage: "finetune".into(),
        epoch: cfg.epochs,
        seed: cfg.seed,
        loss_history,
        vocab: vocab_tokens,
    };
    if let Some(path) = checkpoint_path {
        save_checkpoint_atomic(&params, &meta, None, path)?;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: params.config.clone(),
            meta,
            params,
            optimizer_step: None,
        },
        step_losses,
    })
}
