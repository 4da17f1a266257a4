//! Trainable parameters and the Adam optimizer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            step: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn accumulate(&mut self, grad: &Tensor) -> Result<()> {
        self.grad.add_assign(grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Clears the Adam moments and step counter.
    pub fn reset_optimizer(&mut self) {
        self.first_moment.fill(0.0);
        self.second_moment.fill(0.0);
        self.step = 0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid Adam hyperparameters {self:?}"
            )))
        }
    }
}

/// One bias-corrected Adam update on every parameter, then zeroes the
/// gradients. Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut [&mut Parameter], cfg: &AdamConfig) -> Result<()> {
    for (i, p) in params.iter().enumerate() {
        if !p.grad.all_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of parameter {i} (shape {:?})", p.shape()),
            });
        }
    }
    for p in params.iter_mut() {
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let Parameter {
            value,
            grad,
            first_moment,
            second_moment,
            ..
        } = &mut **p;
        for (((w, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(first_moment.data_mut())
            .zip(second_moment.data_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.zero_grad();
    }
    Ok(())
}
