//! Pre-training loop: sentence-pair classification plus masked-token
//! prediction over shuffled batches.

use super::checkpoint::{save_checkpoint_atomic, Checkpoint, CheckpointMeta};
use super::config::TrainConfig;
use super::data::{build_pretrain_examples, build_vocab, PretrainExample, TRAIN_FRACTION};
use super::schedule::lr_scale;
use super::{sub_seed, Logger};
use crate::model::{Batch, ModelConfig, ModelParams, PretrainBatch, TrainScope};
use crate::tensor::adam::{clip_global_norm, Adam, AdamConfig};
use crate::tensor::ops::cross_entropy_loss;
use crate::text::corpus::Corpus;
use crate::text::vocab::Vocab;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Everything a finished run hands back: the checkpoint plus the exact
/// per-step loss sequence (determinism checks compare these).
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub step_losses: Vec<f64>,
}

fn pretrain_batch(examples: &[&PretrainExample]) -> PretrainBatch {
    let windows: Vec<&crate::text::window::PackedWindow> =
        examples.iter().map(|e| &e.window).collect();
    let base = Batch::from_windows(&windows);
    PretrainBatch {
        nsp_labels: examples.iter().map(|e| e.nsp_label).collect(),
        mlm_targets: examples
            .iter()
            .flat_map(|e| e.mlm_targets.iter().copied())
            .collect(),
        base,
    }
}

/// NSP + (optional) MLM loss with gradients accumulated into `params`.
fn pretrain_step_loss(
    params: &mut ModelParams<f32>,
    batch: &PretrainBatch,
    mlm_enabled: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let (nsp_logits, mlm_logits, cache) = params.pretrain_forward(batch, dropout_rng)?;
    let (nsp_loss, dnsp) = cross_entropy_loss(&nsp_logits, &batch.nsp_labels, None, None)?;
    let compact: Vec<i32> = batch
        .mlm_targets
        .iter()
        .copied()
        .filter(|&t| t >= 0)
        .collect();
    let (mlm_loss, dmlm) = if mlm_enabled && !compact.is_empty() {
        cross_entropy_loss(&mlm_logits, &compact, None, None)?
    } else {
        (
            0.0,
            crate::tensor::Tensor::zeros(vec![compact.len(), params.config.vocab_size]),
        )
    };
    params.pretrain_backward(batch, &cache, &dnsp, &dmlm)?;
    Ok(nsp_loss as f64 + mlm_loss as f64)
}

/// Fraction of training pairs whose next-sentence logit picks the label.
pub fn nsp_accuracy(
    params: &ModelParams<f32>,
    examples: &[PretrainExample],
    batch_size: usize,
) -> Result<f64> {
    let mut correct = 0usize;
    for chunk in examples.chunks(batch_size) {
        let refs: Vec<&PretrainExample> = chunk.iter().collect();
        let batch = pretrain_batch(&refs);
        let (nsp_logits, _, _) = params.pretrain_forward(&batch, None)?;
        for (b, &label) in batch.nsp_labels.iter().enumerate() {
            let row = nsp_logits.row(b);
            let pred = if row[1] > row[0] { 1 } else { 0 };
            if pred == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Run pre-training over the corpus's training split. `epochs == 0` writes
/// the untouched initialization.
pub fn run_pretraining(
    corpus: &Corpus,
    preset: &str,
    cfg: &TrainConfig,
    logger: &mut Logger,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let (train_idx, _) = corpus.split(TRAIN_FRACTION);
    let vocab = build_vocab(corpus, &train_idx);
    let model_cfg = ModelConfig::by_name(preset, vocab.len())?;
    let examples = build_pretrain_examples(
        corpus,
        &train_idx,
        &vocab,
        cfg.pretrain_seq_len,
        cfg.pairs_per_doc,
        cfg.mlm_enabled,
        cfg.seed,
    )?;
    logger.line(&format!(
        "stage=pretrain docs={} pairs={} vocab={} epochs={}",
        train_idx.len(),
        examples.len(),
        vocab.len(),
        cfg.epochs
    ));
    let params = ModelParams::<f32>::init(&model_cfg, cfg.seed)?;
    train_pretrain_loop(params, &vocab, examples, cfg, logger, checkpoint_path)
}

/// Core loop, separated so tests can drive it with prebuilt pieces.
pub fn train_pretrain_loop(
    mut params: ModelParams<f32>,
    vocab: &Vocab,
    examples: Vec<PretrainExample>,
    cfg: &TrainConfig,
    logger: &mut Logger,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::Corpus("no pre-training pairs built".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: if cfg.learning_rate > 0.0 {
            cfg.learning_rate
        } else {
            1.0 // placeholder; steps are skipped entirely at lr == 0
        },
        ..AdamConfig::default()
    })?;
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "dropout", 0));
    let mut step_losses = Vec::new();
    let mut loss_history = Vec::new();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let order = super::epoch_order(examples.len(), cfg.seed, "epoch-shuffle", epoch);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            global_step += 1;
            let refs: Vec<&PretrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let batch = pretrain_batch(&refs);
            let loss = pretrain_step_loss(
                &mut params,
                &batch,
                cfg.mlm_enabled,
                Some(&mut dropout_rng),
            )
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::Numeric {
                    epoch,
                    step,
                    msg: what,
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    step,
                    msg: "loss is not finite".into(),
                });
            }
            if cfg.learning_rate > 0.0 {
                let mut trainable = params.trainable_mut(TrainScope::Pretrain);
                clip_global_norm(&mut trainable, cfg.clip_norm);
                let scale = lr_scale(global_step, total_steps, cfg.warmup_fraction);
                adam.step(&mut trainable, scale)?;
            }
            params.zero_grads();
            epoch_loss += loss;
            step_losses.push(loss);
            logger.line(&format!("epoch={epoch} step={step} loss={loss:.6}"));
        }
        let mean = epoch_loss / steps_per_epoch as f64;
        loss_history.push(mean);
        logger.line(&format!("epoch={epoch} mean_loss={mean:.6}"));
        if let Some(path) = checkpoint_path {
            let meta = CheckpointMeta {
                stage: "pretrain".into(),
                epoch: epoch + 1,
                seed: cfg.seed,
                loss_history: loss_history.clone(),
                vocab: vocab.tokens().to_vec(),
            };
            save_checkpoint_atomic(&params, &meta, None, path)?;
        }
    }
    logger.flush();

    let meta = CheckpointMeta {
        stage: "pretrain".into(),
        epoch: cfg.epochs,
        seed: cfg.seed,
        loss_history,
        vocab: vocab.tokens().to_vec(),
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
