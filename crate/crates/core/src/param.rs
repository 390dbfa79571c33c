//! Named trainable parameters with Adam moment state.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::GradTape;
use crate::tensor::Tensor;

pub(crate) struct ParamInner {
    pub name: String,
    pub value: Tensor,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

/// Shared handle to one trainable tensor. Cloning shares the underlying
/// storage, so a model and its optimizer see the same values.
#[derive(Clone)]
pub struct Parameter {
    pub(crate) inner: Rc<RefCell<ParamInner>>,
    pub(crate) grad: Rc<RefCell<Option<Vec<f64>>>>,
}

impl std::fmt::Debug for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        write!(f, "Parameter({:?}, shape {:?})", inner.name, inner.value.shape())
    }
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Parameter {
        let n = value.numel();
        Parameter {
            inner: Rc::new(RefCell::new(ParamInner {
                name: name.into(),
                value,
                adam_m: vec![0.0; n],
                adam_v: vec![0.0; n],
                step_count: 0,
            })),
            grad: Rc::new(RefCell::new(None)),
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Parameter {
        Parameter::new(name, Tensor::zeros(shape))
    }

    pub fn ones(name: impl Into<String>, shape: Vec<usize>) -> Parameter {
        Parameter::new(name, Tensor::ones(shape))
    }

    pub fn randn(name: impl Into<String>, shape: Vec<usize>, std: f64, rng: &mut Rng) -> Parameter {
        Parameter::new(name, Tensor::randn(shape, 0.0, std, rng))
    }

    /// Glorot uniform init for a [fan_in, fan_out] matrix.
    pub fn xavier(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Parameter {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| (rng.uniform() * 2.0 - 1.0) * limit)
            .collect();
        Parameter::new(name, Tensor::from_vec(vec![fan_in, fan_out], data))
    }

    /// He normal init for conv kernels [C_out, C_in, kh, kw].
    pub fn kaiming_conv(name: impl Into<String>, shape: Vec<usize>, rng: &mut Rng) -> Parameter {
        let fan_in = shape[1] * shape[2] * shape[3];
        let std = (2.0 / fan_in as f64).sqrt();
        Parameter::new(name, Tensor::randn(shape, 0.0, std, rng))
    }

    pub fn name(&self) -> String {
        self.inner.borrow().name.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().value.numel()
    }

    /// The current value, detached from any tape.
    pub fn value(&self) -> Tensor {
        self.inner.borrow().value.clone()
    }

    /// Replaces the value in place (used by the optimizer and checkpoints).
    pub fn set_value(&self, value: Tensor) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.value.shape(), value.shape(), "parameter {}", inner.name);
        inner.value = value;
    }

    /// Binds this parameter onto `tape` (when given) so gradients flow into
    /// it during backward; otherwise returns the plain value.
    pub fn bind(&self, tape: Option<&GradTape>) -> Result<Tensor> {
        match tape {
            Some(tape) => tape.push_leaf(&self.inner.borrow().value, Some(Rc::clone(&self.grad))),
            None => Ok(self.value()),
        }
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    pub fn step_count(&self) -> u64 {
        self.inner.borrow().step_count
    }

    pub fn adam_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let inner = self.inner.borrow();
        (inner.adam_m.clone(), inner.adam_v.clone())
    }
}

/// Panics if two parameters share a name; model constructors call this once.
pub fn assert_unique_names(params: &[Parameter]) {
    let mut seen = HashSet::new();
    for p in params {
        let name = p.name();
        assert!(seen.insert(name.clone()), "duplicate parameter name {name:?}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_start_at_zero() {
        let p = Parameter::ones("w", vec![2, 2]);
        let (m, v) = p.adam_moments();
        assert_eq!(m, vec![0.0; 4]);
        assert_eq!(v, vec![0.0; 4]);
        assert_eq!(p.step_count(), 0);
    }

    #[test]
    fn bind_on_tape_collects_gradients() {
        let p = Parameter::new("w", Tensor::from_vec(vec![2], vec![3.0, 4.0]));
        let tape = GradTape::new();
        let w = p.bind(Some(&tape)).unwrap();
        let loss = w.mul(&w).unwrap().sum_all().unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(p.grad().unwrap(), vec![6.0, 8.0]);
    }

    #[test]
    fn double_bind_accumulates() {
        let p = Parameter::new("w", Tensor::from_vec(vec![1], vec![2.0]));
        let tape = GradTape::new();
        let a = p.bind(Some(&tape)).unwrap();
        let b = p.bind(Some(&tape)).unwrap();
        let loss = a.add(&b).unwrap().sum_all().unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn grad_is_none_until_backward() {
        let p = Parameter::ones("w", vec![2]);
        assert!(p.grad().is_none());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_rejected() {
        let a = Parameter::ones("w", vec![1]);
        let b = Parameter::ones("w", vec![1]);
        assert_unique_names(&[a, b]);
    }
}
