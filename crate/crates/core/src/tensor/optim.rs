//! AdamW with decoupled weight decay.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-parameter first/second moment state plus the shared step counter.
pub struct AdamW<T: Scalar> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Tensor<T>], learning_rate: f64, weight_decay: f64) -> Self {
        let moments = params
            .iter()
            .map(|p| (vec![T::zero(); p.numel()], vec![T::zero(); p.numel()]))
            .collect();
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. Every parameter must carry a
    /// gradient; weight decay is applied decoupled from the moment update.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        self.step_with_lr(params, self.learning_rate)
    }

    /// Like `step` but with an externally scheduled learning rate.
    pub fn step_with_lr(&mut self, params: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Contract(format!(
                "optimizer holds state for {} params, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let b1 = T::of_f64(self.beta1);
        let b2 = T::of_f64(self.beta2);
        let one_m_b1 = T::of_f64(1.0 - self.beta1);
        let one_m_b2 = T::of_f64(1.0 - self.beta2);
        let inv_bias1 = T::of_f64(1.0 / bias1);
        let inv_bias2 = T::of_f64(1.0 / bias2);
        let lr_t = T::of_f64(lr);
        let eps = T::of_f64(self.epsilon);
        let decay = T::of_f64(lr * self.weight_decay);

        for (i, param) in params.iter().enumerate() {
            let grad = param.grad().ok_or_else(|| {
                Error::Contract(format!("parameter {} has no gradient", i))
            })?;
            if grad.len() != param.numel() {
                return Err(Error::Contract(format!(
                    "parameter {} gradient shape mismatch",
                    i
                )));
            }
            let (m, v) = &mut self.moments[i];
            param.with_data_mut(|data| {
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = b1 * m[j] + one_m_b1 * g;
                    v[j] = b2 * v[j] + one_m_b2 * g * g;
                    let m_hat = m[j] * inv_bias1;
                    let v_hat = v[j] * inv_bias2;
                    data[j] = data[j] - lr_t * m_hat / (v_hat.sqrt() + eps) - decay * data[j];
                }
            });
        }
        Ok(())
    }
}
