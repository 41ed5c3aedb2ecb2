//! Parameter store: named tensors in a fixed canonical order.

use super::config::ModelConfig;
use crate::tensor::param::{ParamStore, ParamTensor};
use crate::tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub wq: ParamTensor<T>,
    pub bq: ParamTensor<T>,
    pub wk: ParamTensor<T>,
    pub wv: ParamTensor<T>,
    pub bv: ParamTensor<T>,
    pub wo: ParamTensor<T>,
    pub bo: ParamTensor<T>,
    pub ln1_gain: ParamTensor<T>,
    pub ln1_bias: ParamTensor<T>,
    pub w1: ParamTensor<T>,
    pub b1: ParamTensor<T>,
    pub w2: ParamTensor<T>,
    pub b2: ParamTensor<T>,
    pub ln2_gain: ParamTensor<T>,
    pub ln2_bias: ParamTensor<T>,
}

#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tok_emb: ParamTensor<T>,
    pub seg_emb: ParamTensor<T>,
    pub pos_emb: ParamTensor<T>,
    pub emb_ln_gain: ParamTensor<T>,
    pub emb_ln_bias: ParamTensor<T>,
    pub layers: Vec<LayerParams<T>>,
    /// Convolutional head (kernels, bias); absent in the ablated variant.
    pub conv: Option<(ParamTensor<T>, ParamTensor<T>)>,
    /// Optional classifier hidden layer (weight, bias).
    pub cls_hidden: Option<(ParamTensor<T>, ParamTensor<T>)>,
    pub cls_w: ParamTensor<T>,
    pub cls_b: ParamTensor<T>,
    pub nsp_w: ParamTensor<T>,
    pub nsp_b: ParamTensor<T>,
    pub mlm_w: ParamTensor<T>,
    pub mlm_b: ParamTensor<T>,
}

/// Which parameters an optimizer may touch in a given stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    /// Embeddings, encoder, NSP and MLM heads. Span head untouched.
    Pretrain,
    /// Embeddings, encoder, span head. Pre-training heads stay frozen.
    Finetune,
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh initialization: truncated normal (std 0.02, clipped at two
    /// standard deviations) for matrices and embeddings, zeros for biases,
    /// ones for layer-norm gains. Fully determined by `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> crate::Result<Self> {
        Self::init_with_std(config, seed, 0.02)
    }

    /// Initialization at a chosen weight scale. Gradient checks use a larger
    /// std: at 0.02 the attention scores are so close to uniform that the
    /// query/key gradients sit at the relative-error floor of the checker.
    pub fn init_with_std(config: &ModelConfig, seed: u64, std: f64) -> crate::Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, std).expect("valid std");
        let mut trunc = |shape: Vec<usize>, name: &str| {
            let n: usize = shape.iter().product();
            let data: Vec<T> = (0..n)
                .map(|_| loop {
                    let v = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * std {
                        break T::cast(v);
                    }
                })
                .collect();
            ParamTensor::new(name, Tensor::new(shape, data).expect("shape matches data"))
        };
        let zeros = |shape: Vec<usize>, name: &str| ParamTensor::new(name, Tensor::zeros(shape));
        let ones =
            |shape: Vec<usize>, name: &str| ParamTensor::new(name, Tensor::filled(shape, T::one()));

        let (v, h, f) = (config.vocab_size, config.hidden, config.ff);
        let tok_emb = trunc(vec![v, h], "embeddings.token");
        let seg_emb = trunc(vec![2, h], "embeddings.segment");
        let pos_emb = trunc(vec![config.max_position, h], "embeddings.position");
        let emb_ln_gain = ones(vec![h], "embeddings.ln_gain");
        let emb_ln_bias = zeros(vec![h], "embeddings.ln_bias");

        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = |suffix: &str| format!("layer{i}.{suffix}");
            layers.push(LayerParams {
                wq: trunc(vec![h, h], &p("attn.wq")),
                bq: zeros(vec![h], &p("attn.bq")),
                wk: trunc(vec![h, h], &p("attn.wk")),
                wv: trunc(vec![h, h], &p("attn.wv")),
                bv: zeros(vec![h], &p("attn.bv")),
                wo: trunc(vec![h, h], &p("attn.wo")),
                bo: zeros(vec![h], &p("attn.bo")),
                ln1_gain: ones(vec![h], &p("ln1.gain")),
                ln1_bias: zeros(vec![h], &p("ln1.bias")),
                w1: trunc(vec![h, f], &p("ffn.w1")),
                b1: zeros(vec![f], &p("ffn.b1")),
                w2: trunc(vec![f, h], &p("ffn.w2")),
                b2: zeros(vec![h], &p("ffn.b2")),
                ln2_gain: ones(vec![h], &p("ln2.gain")),
                ln2_bias: zeros(vec![h], &p("ln2.bias")),
            });
        }

        let conv = if config.conv_head {
            Some((
                trunc(
                    vec![config.conv_width, h, config.conv_filters],
                    "head.conv.kernels",
                ),
                zeros(vec![config.conv_filters], "head.conv.bias"),
            ))
        } else {
            None
        };
        let c_in = config.classifier_input();
        let cls_hidden = if config.mlp_head {
            Some((
                trunc(vec![c_in, c_in], "head.hidden.w"),
                zeros(vec![c_in], "head.hidden.b"),
            ))
        } else {
            None
        };
        let cls_w = trunc(vec![c_in, 3], "head.cls.w");
        let cls_b = zeros(vec![3], "head.cls.b");
        let nsp_w = trunc(vec![h, 2], "pretrain.nsp.w");
        let nsp_b = zeros(vec![2], "pretrain.nsp.b");
        let mlm_w = trunc(vec![h, v], "pretrain.mlm.w");
        let mlm_b = zeros(vec![v], "pretrain.mlm.b");

        Ok(Self {
            config: config.clone(),
            tok_emb,
            seg_emb,
            pos_emb,
            emb_ln_gain,
            emb_ln_bias,
            layers,
            conv,
            cls_hidden,
            cls_w,
            cls_b,
            nsp_w,
            nsp_b,
            mlm_w,
            mlm_b,
        })
    }

    pub fn ordered(&self) -> Vec<&ParamTensor<T>> {
        let mut v: Vec<&ParamTensor<T>> = vec![
            &self.tok_emb,
            &self.seg_emb,
            &self.pos_emb,
            &self.emb_ln_gain,
            &self.emb_ln_bias,
        ];
        for l in &self.layers {
            v.extend([
                &l.wq, &l.bq, &l.wk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain, &l.ln1_bias, &l.w1,
                &l.b1, &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias,
            ]);
        }
        if let Some((k, b)) = &self.conv {
            v.push(k);
            v.push(b);
        }
        if let Some((w, b)) = &self.cls_hidden {
            v.push(w);
            v.push(b);
        }
        v.extend([
            &self.cls_w, &self.cls_b, &self.nsp_w, &self.nsp_b, &self.mlm_w, &self.mlm_b,
        ]);
        v
    }

    pub fn ordered_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut v: Vec<&mut ParamTensor<T>> = vec![
            &mut self.tok_emb,
            &mut self.seg_emb,
            &mut self.pos_emb,
            &mut self.emb_ln_gain,
            &mut self.emb_ln_bias,
        ];
        for l in &mut self.layers {
            v.extend([
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
            ]);
        }
        if let Some((k, b)) = &mut self.conv {
            v.push(k);
            v.push(b);
        }
        if let Some((w, b)) = &mut self.cls_hidden {
            v.push(w);
            v.push(b);
        }
        v.extend([
            &mut self.cls_w,
            &mut self.cls_b,
            &mut self.nsp_w,
            &mut self.nsp_b,
            &mut self.mlm_w,
            &mut self.mlm_b,
        ]);
        v
    }

    /// Parameters updated in the given stage. Fine-tuning never hands the
    /// pre-training heads to the optimizer, which keeps them bitwise frozen.
    pub fn trainable_mut(&mut self, scope: TrainScope) -> Vec<&mut ParamTensor<T>> {
        self.ordered_mut()
            .into_iter()
            .filter(|p| match scope {
                TrainScope::Pretrain => !p.name.starts_with("head."),
                TrainScope::Finetune => !p.name.starts_with("pretrain."),
            })
            .collect()
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.ordered_mut().into_iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        for p in self.ordered_mut() {
            p.zero_grad();
        }
    }
}

impl<T: Scalar> ParamStore<T> for ModelParams<T> {
    fn params(&self) -> Vec<&ParamTensor<T>> {
        self.ordered()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.ordered_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census_matches_walk_for_presets() {
        for config in [
            ModelConfig::toy(1000),
            ModelConfig::gradcheck(16),
            {
                let mut c = ModelConfig::toy(500);
                c.conv_head = false;
                c
            },
            {
                let mut c = ModelConfig::toy(500);
                c.mlp_head = true;
                c
            },
        ] {
            let params = ModelParams::<f32>::init(&config, 0).unwrap();
            assert_eq!(
                params.param_count(),
                config.census(),
                "census mismatch for {config:?}"
            );
        }
    }

    #[test]
    fn paper_preset_census_is_in_the_hundred_million_class() {
        // BERT-base geometry with a 30k vocabulary lands around 1e8 weights.
        let census = ModelConfig::paper(30_000).census() as f64;
        assert!(census > 0.8e8 && census < 1.6e8, "{census}");
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let config = ModelConfig::gradcheck(16);
        let a = ModelParams::<f64>::init(&config, 9).unwrap();
        let b = ModelParams::<f64>::init(&config, 9).unwrap();
        for (x, y) in a.ordered().iter().zip(b.ordered().iter()) {
            assert_eq!(x.value.data(), y.value.data(), "{}", x.name);
        }
        for p in a.ordered() {
            for &v in p.value.data() {
                assert!(v.abs() <= 1.0);
            }
        }
        let c = ModelParams::<f64>::init(&config, 10).unwrap();
        assert_ne!(a.tok_emb.value.data(), c.tok_emb.value.data());
    }

    #[test]
    fn names_are_unique() {
        let params = ModelParams::<f32>::init(&ModelConfig::toy(100), 0).unwrap();
        let mut names: Vec<&str> = params.ordered().iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn trainable_scopes_partition_heads() {
        let mut params = ModelParams::<f32>::init(&ModelConfig::toy(100), 0).unwrap();
        let pre: Vec<String> = params
            .trainable_mut(TrainScope::Pretrain)
            .iter()
            .map(|p| p.name.clone())
            .collect();
        let fine: Vec<String> = params
            .trainable_mut(TrainScope::Finetune)
            .iter()
            .map(|p| p.name.clone())
            .collect();
        assert!(pre.iter().any(|n| n.starts_with("pretrain.")));
        assert!(!pre.iter().any(|n| n.starts_with("head.")));
        assert!(fine.iter().any(|n| n.starts_with("head.")));
        assert!(!fine.iter().any(|n| n.starts_with("pretrain.")));
        assert!(pre.iter().any(|n| n.starts_with("layer0.")));
        assert!(fine.iter().any(|n| n.starts_with("layer0.")));
    }
}
