//! Dense row-major f64 tensors.
//!
//! A `Tensor` is a shape plus a flat value buffer. When an operation runs
//! while any operand is attached to a [`crate::tape::GradTape`], the result is
//! attached to the same tape and remembers how to push gradients back.

use std::rc::Rc;

use crate::tape::NodeRef;

#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            numel_of(&shape),
            data.len(),
            "shape {:?} expects {} values, got {}",
            shape,
            numel_of(&shape),
            data.len()
        );
        Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel_of(&shape);
        Tensor::from_vec(shape, vec![0.0; n])
    }

    pub fn ones(shape: Vec<usize>) -> Tensor {
        let n = numel_of(&shape);
        Tensor::from_vec(shape, vec![1.0; n])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Tensor {
        let n = numel_of(&shape);
        Tensor::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(vec![], vec![value])
    }

    /// Values drawn i.i.d. from N(mean, std^2).
    pub fn randn(shape: Vec<usize>, mean: f64, std: f64, rng: &mut crate::rng::Rng) -> Tensor {
        let n = numel_of(&shape);
        let data = (0..n).map(|_| rng.normal_scaled(mean, std)).collect();
        Tensor::from_vec(shape, data)
    }

    pub(crate) fn from_rc(shape: Vec<usize>, data: Rc<Vec<f64>>) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            shape,
            data,
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.data)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// A copy of this tensor detached from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    /// Accumulated gradient, available once the tape has run backward.
    /// Zero-filled for tensors the loss never reached.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let node = self.node.as_ref()?;
        node.grad(self.numel())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Integer-valued tensor for token ids and class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i64>,
}

impl IntTensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<i64>) -> IntTensor {
        assert_eq!(numel_of(&shape), data.len());
        IntTensor { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Boolean tensor for attention masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolTensor {
    pub shape: Vec<usize>,
    pub data: Vec<bool>,
}

impl BoolTensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<bool>) -> BoolTensor {
        assert_eq!(numel_of(&shape), data.len());
        BoolTensor { shape, data }
    }

    pub fn trues(shape: Vec<usize>) -> BoolTensor {
        let n = numel_of(&shape);
        BoolTensor {
            shape,
            data: vec![true; n],
        }
    }
}
