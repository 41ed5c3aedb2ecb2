//! One-hidden-layer perceptron over sparse presence features:
//! dim -> hidden (ReLU) -> 2 classes.

use crate::tensor::adam::{Adam, AdamConfig};
use crate::tensor::param::ParamTensor;
use crate::tensor::Tensor;
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct SentenceClassifier {
    pub w1: ParamTensor<f32>,
    pub b1: ParamTensor<f32>,
    pub w2: ParamTensor<f32>,
    pub b2: ParamTensor<f32>,
    pub hidden: usize,
    pub dim: usize,
}

impl SentenceClassifier {
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.05).expect("valid std");
        let mut sample = |shape: Vec<usize>, name: &str| {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            ParamTensor::new(name, Tensor::new(shape, data).unwrap())
        };
        Self {
            w1: sample(vec![dim, hidden], "mlp.w1"),
            b1: ParamTensor::new("mlp.b1", Tensor::zeros(vec![hidden])),
            w2: sample(vec![hidden, 2], "mlp.w2"),
            b2: ParamTensor::new("mlp.b2", Tensor::zeros(vec![2])),
            hidden,
            dim,
        }
    }

    /// Hidden activations for a batch of active-bucket lists.
    fn hidden_forward(&self, batch: &[&[u32]]) -> (Tensor<f32>, Tensor<f32>) {
        let h = self.hidden;
        let mut pre = Tensor::zeros(vec![batch.len(), h]);
        for (r, actives) in batch.iter().enumerate() {
            let row = pre.row_mut(r);
            row.copy_from_slice(self.b1.value.data());
            for &j in actives.iter() {
                let w_row = &self.w1.value.data()[j as usize * h..(j as usize + 1) * h];
                for (o, &w) in row.iter_mut().zip(w_row) {
                    *o += w;
                }
            }
        }
        let mut act = pre.clone();
        for v in act.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        (pre, act)
    }

    /// Class logits for a batch.
    pub fn logits(&self, batch: &[&[u32]]) -> Tensor<f32> {
        let (_, act) = self.hidden_forward(batch);
        crate::tensor::ops::linear_forward(&act, &self.w2.value, &self.b2.value)
            .expect("shapes fixed by construction")
    }

    /// Probability that a sentence is positive (contains the tag's value).
    pub fn positive_prob(&self, actives: &[u32]) -> f32 {
        let logits = self.logits(&[actives]);
        let row = logits.row(0);
        let m = row[0].max(row[1]);
        let e0 = (row[0] - m).exp();
        let e1 = (row[1] - m).exp();
        e1 / (e0 + e1)
    }

    /// One Adam step on a batch. Returns the loss.
    pub fn train_step(
        &mut self,
        batch: &[&[u32]],
        labels: &[i32],
        class_weights: &[f32; 2],
        adam: &mut Adam,
        lr_scale: f64,
    ) -> Result<f32> {
        let (pre, act) = self.hidden_forward(batch);
        let logits =
            crate::tensor::ops::linear_forward(&act, &self.w2.value, &self.b2.value)?;
        let (loss, dlogits) = crate::tensor::ops::cross_entropy_loss(
            &logits,
            labels,
            Some(class_weights.as_slice()),
            None,
        )?;
        let (dact, dw2, db2) =
            crate::tensor::ops::linear_backward(&act, &self.w2.value, &dlogits)?;
        self.w2.accumulate(&dw2)?;
        self.b2.accumulate(&db2)?;
        let dpre = crate::tensor::ops::relu_backward(&pre, &dact);
        // Sparse rows of w1: only active buckets receive gradient.
        let h = self.hidden;
        for (r, actives) in batch.iter().enumerate() {
            let drow = dpre.row(r);
            for &j in actives.iter() {
                let g_row =
                    &mut self.w1.grad.data_mut()[j as usize * h..(j as usize + 1) * h];
                for (g, &d) in g_row.iter_mut().zip(drow) {
                    *g += d;
                }
            }
            let b_grad = self.b1.grad.data_mut();
            for (g, &d) in b_grad.iter_mut().zip(drow) {
                *g += d;
            }
        }
        adam.step(
            &mut [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2],
            lr_scale,
        )?;
        Ok(loss)
    }
}

/// Train until the batch loss stabilizes or `epochs` runs out.
pub fn train_classifier(
    features: &[Vec<u32>],
    labels: &[i32],
    dim: usize,
    hidden: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    class_weights: [f32; 2],
    seed: u64,
) -> Result<SentenceClassifier> {
    let mut clf = SentenceClassifier::init(dim, hidden, seed);
    let mut adam = Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    })?;
    for epoch in 0..epochs {
        let order = crate::train::epoch_order(features.len(), seed, "baseline-shuffle", epoch);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&[u32]> = chunk.iter().map(|&i| features[i].as_slice()).collect();
            let batch_labels: Vec<i32> = chunk.iter().map(|&i| labels[i]).collect();
            clf.train_step(&batch, &batch_labels, &class_weights, &mut adam, 1.0)?;
        }
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::featurize::NgramFeaturizer;

    #[test]
    fn linearly_separable_labels_reach_full_accuracy() {
        // Two disjoint token sets -> disjoint feature buckets.
        let f = NgramFeaturizer::new(1 << 10, 3);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let a = format!("alpha{i}");
            let b = format!("beta{i}");
            features.push(f.featurize(&["the", "good", "one", &a]));
            labels.push(1);
            features.push(f.featurize(&["the", "bad", "one", &b]));
            labels.push(0);
        }
        let clf =
            train_classifier(&features, &labels, 1 << 10, 16, 50, 16, 1e-2, [1.0, 1.0], 5)
                .unwrap();
        let mut correct = 0;
        for (x, &y) in features.iter().zip(&labels) {
            let p = clf.positive_prob(x);
            if (p > 0.5) == (y == 1) {
                correct += 1;
            }
        }
        assert_eq!(correct, features.len(), "training accuracy must reach 1.0");
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let f = NgramFeaturizer::new(1 << 10, 3);
        let features: Vec<Vec<u32>> = (0..20)
            .map(|i| f.featurize(&["tok", &format!("x{i}")]))
            .collect();
        let labels: Vec<i32> = (0..20).map(|i| (i % 2) as i32).collect();
        let a = train_classifier(&features, &labels, 1 << 10, 8, 5, 8, 1e-2, [1.0, 1.0], 9)
            .unwrap();
        let b = train_classifier(&features, &labels, 1 << 10, 8, 5, 8, 1e-2, [1.0, 1.0], 9)
            .unwrap();
        assert_eq!(a.w1.value.data(), b.w1.value.data());
        assert_eq!(a.w2.value.data(), b.w2.value.data());
    }
}
