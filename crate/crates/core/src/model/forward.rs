//! Forward and backward passes. Each forward returns the tensors the matching
//! backward needs; backwards accumulate gradients into the parameter store.

use super::params::ModelParams;
use crate::tensor::ops::{
    apply_mask, attention_backward, attention_forward, conv1d_backward, conv1d_forward,
    dropout_mask, gelu_backward, gelu_forward, layer_norm_backward, layer_norm_forward,
    linear_backward, linear_forward, relu_backward, relu_forward, AttentionCache,
    AttentionParams, LayerNormCache,
};
use crate::tensor::{Scalar, Tensor};
use crate::text::window::PackedWindow;
use crate::text::vocab::CLS_ID;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;

/// A stack of packed windows flattened for batched passes.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    pub len: usize,
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub position_ids: Vec<u32>,
    pub pad_mask: Vec<bool>,
    pub span_labels: Vec<i32>,
}

impl Batch {
    pub fn from_windows(windows: &[&PackedWindow]) -> Batch {
        assert!(!windows.is_empty());
        let len = windows[0].len();
        let n = windows.len();
        let mut batch = Batch {
            n,
            len,
            token_ids: Vec::with_capacity(n * len),
            segment_ids: Vec::with_capacity(n * len),
            position_ids: Vec::with_capacity(n * len),
            pad_mask: Vec::with_capacity(n * len),
            span_labels: Vec::with_capacity(n * len),
        };
        for w in windows {
            assert_eq!(w.len(), len, "windows in a batch must share a length");
            batch.token_ids.extend_from_slice(&w.token_ids);
            batch.segment_ids.extend_from_slice(&w.segment_ids);
            batch.position_ids.extend_from_slice(&w.position_ids);
            batch.pad_mask.extend_from_slice(&w.pad_mask);
            batch.span_labels.extend_from_slice(&w.labels);
        }
        batch
    }
}

/// Pre-training batch: windows plus sentence-pair labels and masked-token
/// targets (`-1` = not masked).
#[derive(Debug, Clone)]
pub struct PretrainBatch {
    pub base: Batch,
    pub nsp_labels: Vec<i32>,
    pub mlm_targets: Vec<i32>,
}

struct LnState<T> {
    input: Tensor<T>,
    cache: LayerNormCache<T>,
}

pub struct EmbedCache<T> {
    ln: LnState<T>,
    drop: Option<Vec<T>>,
}

pub struct LayerCache<T> {
    x_in: Tensor<T>,
    attn: AttentionCache<T>,
    attn_drop: Option<Vec<T>>,
    ln1: LnState<T>,
    x1: Tensor<T>,
    ff_pre: Tensor<T>,
    ff_act: Tensor<T>,
    ff_drop: Option<Vec<T>>,
    ln2: LnState<T>,
}

pub struct EncoderCache<T> {
    embed: EmbedCache<T>,
    layers: Vec<LayerCache<T>>,
}

pub struct SpanHeadCache<T> {
    conv_in: Tensor<T>,
    conv_pre: Option<Tensor<T>>,
    /// Conv ReLU output (or the pad-zeroed hidden states when ablated).
    features: Tensor<T>,
    hidden_pre: Option<Tensor<T>>,
    hidden_act: Option<Tensor<T>>,
}

pub struct SpanPassCache<T> {
    pub hidden: Tensor<T>,
    enc: EncoderCache<T>,
    head: SpanHeadCache<T>,
}

pub struct PretrainPassCache<T> {
    pub hidden: Tensor<T>,
    enc: EncoderCache<T>,
    cls_rows: Tensor<T>,
    mlm_rows: Tensor<T>,
    mlm_positions: Vec<usize>,
}

impl<T: Scalar> ModelParams<T> {
    fn dropout<'r>(
        &self,
        x: &mut Tensor<T>,
        rng: &mut Option<&'r mut ChaCha8Rng>,
    ) -> Option<Vec<T>> {
        let rate = self.config.dropout;
        match rng {
            Some(r) if rate > 0.0 => {
                let mask = dropout_mask::<T>(x.len(), rate, *r);
                apply_mask(x, &mask);
                Some(mask)
            }
            _ => None,
        }
    }

    /// Token + segment + position embeddings, layer-normed (and dropped out
    /// in training mode).
    pub fn embed(
        &self,
        batch: &Batch,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<T>, EmbedCache<T>)> {
        let h = self.config.hidden;
        let rows = batch.n * batch.len;
        let mut sum = Tensor::zeros(vec![batch.n, batch.len, h]);
        {
            let tok = self.tok_emb.value.data();
            let seg = self.seg_emb.value.data();
            let pos = self.pos_emb.value.data();
            let vocab = self.config.vocab_size;
            let maxpos = self.config.max_position;
            let out = sum.data_mut();
            for r in 0..rows {
                let tid = batch.token_ids[r] as usize;
                let sid = batch.segment_ids[r] as usize;
                let pid = batch.position_ids[r] as usize;
                if tid >= vocab {
                    return Err(Error::Vocab(format!(
                        "token id {tid} out of range for vocabulary of {vocab}"
                    )));
                }
                if pid >= maxpos || sid >= 2 {
                    return Err(Error::Vocab(format!(
                        "position {pid} or segment {sid} out of range"
                    )));
                }
                let dst = &mut out[r * h..(r + 1) * h];
                for i in 0..h {
                    dst[i] = tok[tid * h + i] + seg[sid * h + i] + pos[pid * h + i];
                }
            }
        }
        let (mut y, ln_cache) = layer_norm_forward(
            &sum,
            &self.emb_ln_gain.value,
            &self.emb_ln_bias.value,
            T::cast(LN_EPS),
        )?;
        let drop = self.dropout(&mut y, &mut dropout_rng);
        Ok((
            y,
            EmbedCache {
                ln: LnState {
                    input: sum,
                    cache: ln_cache,
                },
                drop,
            },
        ))
    }

    pub fn embed_backward(&mut self, batch: &Batch, cache: &EmbedCache<T>, mut dy: Tensor<T>) -> Result<()> {
        if let Some(mask) = &cache.drop {
            apply_mask(&mut dy, mask);
        }
        let (dsum, dgain, dbias) =
            layer_norm_backward(&cache.ln.input, &self.emb_ln_gain.value, &cache.ln.cache, &dy)?;
        self.emb_ln_gain.accumulate(&dgain)?;
        self.emb_ln_bias.accumulate(&dbias)?;
        let h = self.config.hidden;
        let rows = batch.n * batch.len;
        let src = dsum.data();
        for r in 0..rows {
            let tid = batch.token_ids[r] as usize;
            let sid = batch.segment_ids[r] as usize;
            let pid = batch.position_ids[r] as usize;
            let grad_row = &src[r * h..(r + 1) * h];
            let tok = &mut self.tok_emb.grad.data_mut()[tid * h..(tid + 1) * h];
            for (g, &d) in tok.iter_mut().zip(grad_row) {
                *g += d;
            }
            let seg = &mut self.seg_emb.grad.data_mut()[sid * h..(sid + 1) * h];
            for (g, &d) in seg.iter_mut().zip(grad_row) {
                *g += d;
            }
            let pos = &mut self.pos_emb.grad.data_mut()[pid * h..(pid + 1) * h];
            for (g, &d) in pos.iter_mut().zip(grad_row) {
                *g += d;
            }
        }
        Ok(())
    }

    fn attn_params<'a>(layer: &'a super::params::LayerParams<T>) -> AttentionParams<'a, T> {
        AttentionParams {
            wq: &layer.wq.value,
            bq: &layer.bq.value,
            wk: &layer.wk.value,
            wv: &layer.wv.value,
            bv: &layer.bv.value,
            wo: &layer.wo.value,
            bo: &layer.bo.value,
        }
    }

    /// Post-norm transformer stack over embedded input.
    pub fn encoder_forward(
        &self,
        embedded: Tensor<T>,
        pad_mask: &[bool],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
        embed_cache: EmbedCache<T>,
    ) -> Result<(Tensor<T>, EncoderCache<T>)> {
        let heads = self.config.heads;
        let eps = T::cast(LN_EPS);
        let mut x = embedded;
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x_in = x;
            let (mut attn_out, attn_cache) =
                attention_forward(&x_in, &Self::attn_params(layer), heads, pad_mask)?;
            let attn_drop = self.dropout(&mut attn_out, &mut dropout_rng);
            let mut resid1 = attn_out;
            resid1.add_assign(&x_in)?;
            let (x1, ln1_cache) =
                layer_norm_forward(&resid1, &layer.ln1_gain.value, &layer.ln1_bias.value, eps)?;
            let ff_pre = linear_forward(&x1, &layer.w1.value, &layer.b1.value)?;
            let ff_act = gelu_forward(&ff_pre);
            let mut ff_out = linear_forward(&ff_act, &layer.w2.value, &layer.b2.value)?;
            let ff_drop = self.dropout(&mut ff_out, &mut dropout_rng);
            let mut resid2 = ff_out;
            resid2.add_assign(&x1)?;
            let (x2, ln2_cache) =
                layer_norm_forward(&resid2, &layer.ln2_gain.value, &layer.ln2_bias.value, eps)?;
            layer_caches.push(LayerCache {
                x_in,
                attn: attn_cache,
                attn_drop,
                ln1: LnState {
                    input: resid1,
                    cache: ln1_cache,
                },
                x1,
                ff_pre,
                ff_act,
                ff_drop,
                ln2: LnState {
                    input: resid2,
                    cache: ln2_cache,
                },
            });
            x = x2;
        }
        x.ensure_finite("encoder forward output")?;
        Ok((
            x,
            EncoderCache {
                embed: embed_cache,
                layers: layer_caches,
            },
        ))
    }

    /// Full encoder backward from `dhidden`, including the embedding tables.
    pub fn encoder_backward(
        &mut self,
        batch: &Batch,
        cache: &EncoderCache<T>,
        dhidden: Tensor<T>,
    ) -> Result<()> {
        let heads = self.config.heads;
        let mut d = dhidden;
        for (li, lc) in cache.layers.iter().enumerate().rev() {
            // Borrow the layer immutably for values; accumulate later.
            let (d_resid2, dg2, db2) = {
                let layer = &self.layers[li];
                layer_norm_backward(&lc.ln2.input, &layer.ln2_gain.value, &lc.ln2.cache, &d)?
            };
            let mut d_ff_out = d_resid2.clone();
            if let Some(mask) = &lc.ff_drop {
                apply_mask(&mut d_ff_out, mask);
            }
            let (d_ff_act, dw2, db2_lin) = {
                let layer = &self.layers[li];
                linear_backward(&lc.ff_act, &layer.w2.value, &d_ff_out)?
            };
            let d_ff_pre = gelu_backward(&lc.ff_pre, &d_ff_act);
            let (d_x1_ff, dw1, db1) = {
                let layer = &self.layers[li];
                linear_backward(&lc.x1, &layer.w1.value, &d_ff_pre)?
            };
            let mut d_x1 = d_resid2; // residual path
            d_x1.add_assign(&d_x1_ff)?;

            let (d_resid1, dg1, db1_ln) = {
                let layer = &self.layers[li];
                layer_norm_backward(&lc.ln1.input, &layer.ln1_gain.value, &lc.ln1.cache, &d_x1)?
            };
            let mut d_attn_out = d_resid1.clone();
            if let Some(mask) = &lc.attn_drop {
                apply_mask(&mut d_attn_out, mask);
            }
            let grads = {
                let layer = &self.layers[li];
                attention_backward(
                    &lc.x_in,
                    &Self::attn_params(layer),
                    heads,
                    &lc.attn,
                    &d_attn_out,
                )?
            };
            let mut d_x_in = d_resid1; // residual path
            d_x_in.add_assign(&grads.dx)?;

            let layer = &mut self.layers[li];
            layer.ln2_gain.accumulate(&dg2)?;
            layer.ln2_bias.accumulate(&db2)?;
            layer.w2.accumulate(&dw2)?;
            layer.b2.accumulate(&db2_lin)?;
            layer.w1.accumulate(&dw1)?;
            layer.b1.accumulate(&db1)?;
            layer.ln1_gain.accumulate(&dg1)?;
            layer.ln1_bias.accumulate(&db1_ln)?;
            layer.wq.accumulate(&grads.dwq)?;
            layer.bq.accumulate(&grads.dbq)?;
            layer.wk.accumulate(&grads.dwk)?;
            layer.wv.accumulate(&grads.dwv)?;
            layer.bv.accumulate(&grads.dbv)?;
            layer.wo.accumulate(&grads.dwo)?;
            layer.bo.accumulate(&grads.dbo)?;

            d = d_x_in;
        }
        self.embed_backward(batch, &cache.embed, d)
    }

    fn zero_pad_rows(x: &mut Tensor<T>, pad_mask: &[bool]) {
        let h = x.last_dim();
        let data = x.data_mut();
        for (r, &is_pad) in pad_mask.iter().enumerate() {
            if is_pad {
                data[r * h..(r + 1) * h].fill(T::zero());
            }
        }
    }

    /// Span head: conv (width `conv_width`, `conv_filters` filters) -> ReLU
    /// -> linear to 3 logits per token. With `conv_head` off, hidden states
    /// feed the classifier directly; with `mlp_head` on, one extra
    /// ReLU-hidden layer sits in front of the classifier. Padded positions
    /// are zeroed before the convolution so window padding cannot leak into
    /// real positions through the receptive field.
    pub fn span_head(
        &self,
        hidden: &Tensor<T>,
        pad_mask: &[bool],
    ) -> Result<(Tensor<T>, SpanHeadCache<T>)> {
        let mut conv_in = hidden.clone();
        Self::zero_pad_rows(&mut conv_in, pad_mask);
        let (features, conv_pre) = if let Some((k, b)) = &self.conv {
            let pre = conv1d_forward(&conv_in, &k.value, &b.value)?;
            (relu_forward(&pre), Some(pre))
        } else {
            (conv_in.clone(), None)
        };
        let (hidden_pre, hidden_act) = if let Some((w, b)) = &self.cls_hidden {
            let pre = linear_forward(&features, &w.value, &b.value)?;
            let act = relu_forward(&pre);
            (Some(pre), Some(act))
        } else {
            (None, None)
        };
        let cls_in = hidden_act.as_ref().unwrap_or(&features);
        let logits = linear_forward(cls_in, &self.cls_w.value, &self.cls_b.value)?;
        logits.ensure_finite("span head logits")?;
        Ok((
            logits,
            SpanHeadCache {
                conv_in,
                conv_pre,
                features,
                hidden_pre,
                hidden_act,
            },
        ))
    }

    pub fn span_head_backward(
        &mut self,
        cache: &SpanHeadCache<T>,
        pad_mask: &[bool],
        dlogits: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let cls_in = cache.hidden_act.as_ref().unwrap_or(&cache.features);
        let (d_cls_in, dw, db) = linear_backward(cls_in, &self.cls_w.value, dlogits)?;
        self.cls_w.accumulate(&dw)?;
        self.cls_b.accumulate(&db)?;
        let d_features = if let Some((w, _)) = &self.cls_hidden {
            let pre = cache.hidden_pre.as_ref().expect("mlp cache present");
            let d_act = relu_backward(pre, &d_cls_in);
            let (d_feat, dw_h, db_h) = linear_backward(&cache.features, &w.value, &d_act)?;
            let (w_p, b_p) = self.cls_hidden.as_mut().expect("checked above");
            w_p.accumulate(&dw_h)?;
            b_p.accumulate(&db_h)?;
            d_feat
        } else {
            d_cls_in
        };
        let mut d_conv_in = if let Some((k, _)) = &self.conv {
            let pre = cache.conv_pre.as_ref().expect("conv cache present");
            let d_pre = relu_backward(pre, &d_features);
            let (d_in, dk, db_c) = conv1d_backward(&cache.conv_in, &k.value, &d_pre)?;
            let (k_p, b_p) = self.conv.as_mut().expect("checked above");
            k_p.accumulate(&dk)?;
            b_p.accumulate(&db_c)?;
            d_in
        } else {
            d_features
        };
        Self::zero_pad_rows(&mut d_conv_in, pad_mask);
        Ok(d_conv_in)
    }

    /// Whole span path: embed, encode, head. Returns `[n, len, 3]` logits.
    pub fn span_forward(
        &self,
        batch: &Batch,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<T>, SpanPassCache<T>)> {
        let (embedded, embed_cache) = self.embed(batch, dropout_rng.as_deref_mut())?;
        let (hidden, enc) =
            self.encoder_forward(embedded, &batch.pad_mask, dropout_rng, embed_cache)?;
        let (logits, head) = self.span_head(&hidden, &batch.pad_mask)?;
        Ok((logits, SpanPassCache { hidden, enc, head }))
    }

    pub fn span_backward(
        &mut self,
        batch: &Batch,
        cache: &SpanPassCache<T>,
        dlogits: &Tensor<T>,
    ) -> Result<()> {
        let dhidden = self.span_head_backward(&cache.head, &batch.pad_mask, dlogits)?;
        self.encoder_backward(batch, &cache.enc, dhidden)
    }

    /// Pre-training heads: NSP reads the `[CLS]` position, MLM projects the
    /// masked positions only (positions with target != -1).
    pub fn pretrain_forward(
        &self,
        batch: &PretrainBatch,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<T>, Tensor<T>, PretrainPassCache<T>)> {
        let base = &batch.base;
        debug_assert!(base
            .token_ids
            .iter()
            .step_by(base.len)
            .all(|&t| t == CLS_ID));
        let (embedded, embed_cache) = self.embed(base, dropout_rng.as_deref_mut())?;
        let (hidden, enc) =
            self.encoder_forward(embedded, &base.pad_mask, dropout_rng, embed_cache)?;
        let h = self.config.hidden;

        let mut cls_rows = Tensor::zeros(vec![base.n, h]);
        for b in 0..base.n {
            let src = &hidden.data()[b * base.len * h..(b * base.len + 1) * h];
            cls_rows.data_mut()[b * h..(b + 1) * h].copy_from_slice(src);
        }
        let nsp_logits = linear_forward(&cls_rows, &self.nsp_w.value, &self.nsp_b.value)?;

        let mlm_positions: Vec<usize> = (0..batch.mlm_targets.len())
            .filter(|&i| batch.mlm_targets[i] >= 0)
            .collect();
        let mut mlm_rows = Tensor::zeros(vec![mlm_positions.len(), h]);
        for (row, &p) in mlm_positions.iter().enumerate() {
            mlm_rows.data_mut()[row * h..(row + 1) * h]
                .copy_from_slice(&hidden.data()[p * h..(p + 1) * h]);
        }
        let mlm_logits = if mlm_positions.is_empty() {
            Tensor::zeros(vec![0, self.config.vocab_size])
        } else {
            linear_forward(&mlm_rows, &self.mlm_w.value, &self.mlm_b.value)?
        };
        nsp_logits.ensure_finite("nsp logits")?;
        mlm_logits.ensure_finite("mlm logits")?;
        Ok((
            nsp_logits,
            mlm_logits,
            PretrainPassCache {
                hidden,
                enc,
                cls_rows,
                mlm_rows,
                mlm_positions,
            },
        ))
    }

    pub fn pretrain_backward(
        &mut self,
        batch: &PretrainBatch,
        cache: &PretrainPassCache<T>,
        dnsp: &Tensor<T>,
        dmlm: &Tensor<T>,
    ) -> Result<()> {
        let base = &batch.base;
        let h = self.config.hidden;
        let mut dhidden = Tensor::zeros(vec![base.n, base.len, h]);

        let (dcls_rows, dw, db) = linear_backward(&cache.cls_rows, &self.nsp_w.value, dnsp)?;
        self.nsp_w.accumulate(&dw)?;
        self.nsp_b.accumulate(&db)?;
        for b in 0..base.n {
            let dst = &mut dhidden.data_mut()[b * base.len * h..(b * base.len + 1) * h];
            for (o, &g) in dst.iter_mut().zip(&dcls_rows.data()[b * h..(b + 1) * h]) {
                *o += g;
            }
        }

        if !cache.mlm_positions.is_empty() {
            let (dmlm_rows, dw, db) = linear_backward(&cache.mlm_rows, &self.mlm_w.value, dmlm)?;
            self.mlm_w.accumulate(&dw)?;
            self.mlm_b.accumulate(&db)?;
            for (row, &p) in cache.mlm_positions.iter().enumerate() {
                let dst = &mut dhidden.data_mut()[p * h..(p + 1) * h];
                for (o, &g) in dst.iter_mut().zip(&dmlm_rows.data()[row * h..(row + 1) * h]) {
                    *o += g;
                }
            }
        }

        self.encoder_backward(base, &cache.enc, dhidden)
    }
}
