//! Adam with bias correction.

use super::param::ParamTensor;
use super::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state shared by every parameter it updates: one step counter
/// per optimizer instance.
#[derive(Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if cfg.lr <= 0.0 {
            return Err(Error::Config(format!("adam lr must be > 0, got {}", cfg.lr)));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0,1), got {} and {}",
                cfg.beta1, cfg.beta2
            )));
        }
        Ok(Self { cfg, step: 0 })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the given parameters. The step counter advances once
    /// per call; gradients are zeroed after being consumed. A non-finite
    /// gradient aborts with the offending parameter's name. `lr_scale`
    /// multiplies the base learning rate (used for warmup/decay schedules).
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [&mut ParamTensor<T>],
        lr_scale: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::cast(self.cfg.beta1);
        let b2 = T::cast(self.cfg.beta2);
        let eps = T::cast(self.cfg.eps);
        let lr = T::cast(self.cfg.lr * lr_scale);
        let bc1 = T::one() - T::cast(self.cfg.beta1.powi(t));
        let bc2 = T::one() - T::cast(self.cfg.beta2.powi(t));
        let one = T::one();

        for p in params.iter_mut() {
            p.grad
                .ensure_finite(&p.name)
                .map_err(|_| Error::NonFinite(format!("gradient of {}", p.name)))?;
            let g = p.grad.data();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            let x = p.value.data_mut();
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                x[i] = x[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(params: &mut [&mut ParamTensor<T>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        for &g in p.grad.data() {
            let g = g.to_f64_lossy();
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::cast(max_norm / norm);
        for p in params.iter_mut() {
            p.grad.scale(scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(v: f64) -> ParamTensor<f64> {
        ParamTensor::new("p", Tensor::from_f64(vec![1], &[v]).unwrap())
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar_param(1.5);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step(&mut [&mut p], 1.0).unwrap();
        adam.step(&mut [&mut p], 1.0).unwrap();
        assert_eq!(p.value.data()[0], 1.5);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Hand computation with bias correction: m_hat = g, v_hat = g^2,
        // so the first update is lr * g / (|g| + eps) ~= lr.
        let mut p = scalar_param(1.0);
        p.grad.data_mut()[0] = 1.0;
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        })
        .unwrap();
        adam.step(&mut [&mut p], 1.0).unwrap();
        let got = p.value.data()[0];
        assert!((got - 0.9).abs() < 1e-6, "got {got}");
        assert_eq!(p.grad.data()[0], 0.0, "gradient must be zeroed");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_param(1.0);
        p.name = "encoder.layer0.wq".into();
        p.grad.data_mut()[0] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let err = adam.step(&mut [&mut p], 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("encoder.layer0.wq"), "{msg}");
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Adam::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        })
        .is_err());
        assert!(Adam::new(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        })
        .is_err());
    }

    #[test]
    fn clip_rescales_long_gradients() {
        let mut p = ParamTensor::new("p", Tensor::from_f64(vec![2], &[0.0, 0.0]).unwrap());
        p.grad.data_mut().copy_from_slice(&[3.0, 4.0]);
        let norm = clip_global_norm(&mut [&mut p], 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g: &[f64] = p.grad.data();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
