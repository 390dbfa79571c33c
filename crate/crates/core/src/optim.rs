//! Adam optimizer with decoupled weight decay.

use crate::error::{Result, TensorError};
use crate::param::Parameter;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One bias-corrected update. Every parameter must carry a gradient
    /// (populated by backward); gradients are cleared after the step.
    pub fn step(&self, params: &[Parameter]) -> Result<()> {
        // Validate first so a failed call leaves every parameter untouched.
        for p in params {
            if p.grad.borrow().is_none() {
                return Err(TensorError::MissingGrad { name: p.name() });
            }
        }
        for p in params {
            let g = p.grad.borrow_mut().take().expect("checked above");
            let mut inner = p.inner.borrow_mut();
            inner.step_count += 1;
            let t = inner.step_count;
            let bc1 = 1.0 - self.beta1.powi(t as i32);
            let bc2 = 1.0 - self.beta2.powi(t as i32);
            let mut value = inner.value.data().to_vec();
            for i in 0..value.len() {
                let m = self.beta1 * inner.adam_m[i] + (1.0 - self.beta1) * g[i];
                let v = self.beta2 * inner.adam_v[i] + (1.0 - self.beta2) * g[i] * g[i];
                inner.adam_m[i] = m;
                inner.adam_v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                value[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps)
                    + self.weight_decay * value[i]);
            }
            let shape = inner.value.shape().to_vec();
            inner.value = Tensor::from_vec(shape, value);
        }
        Ok(())
    }
}
