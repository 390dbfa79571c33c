//! Reverse-mode gradient tape.
//!
//! Operations append nodes during the forward pass; `backward` walks the
//! nodes once in reverse append order, which is already a valid reverse
//! topological order. Each node's closure receives the gradient of its own
//! output and scatters contributions into the gradients of its inputs (input
//! node ids are always smaller than the node's own id).
//!
//! A tape is single-shot: after `backward` it refuses further recording and a
//! second `backward`, so second-order use fails loudly instead of silently
//! producing wrong numbers.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Names of the primitive differentiable operations. Used for diagnostics and
/// for asserting that the gradient-check registry covers every kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
    Scale,
    AddScalar,
    SumAll,
    Softmax,
    MeanReduce,
    Concat,
    Reshape,
    Permute,
    GatherRows,
    ApplyKeyMask,
    LayerNorm,
    BatchNorm2d,
    Conv2d,
    Dropout,
    CrossEntropy,
}

impl OpKind {
    /// Every kind that has a backward rule (everything but `Leaf`).
    pub const DIFFERENTIABLE: &'static [OpKind] = &[
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::SumAll,
        OpKind::Softmax,
        OpKind::MeanReduce,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::GatherRows,
        OpKind::ApplyKeyMask,
        OpKind::LayerNorm,
        OpKind::BatchNorm2d,
        OpKind::Conv2d,
        OpKind::Dropout,
        OpKind::CrossEntropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::SumAll => "sum_all",
            OpKind::Softmax => "softmax",
            OpKind::MeanReduce => "mean_reduce",
            OpKind::Concat => "concat",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute",
            OpKind::GatherRows => "gather_rows",
            OpKind::ApplyKeyMask => "apply_key_mask",
            OpKind::LayerNorm => "layer_norm",
            OpKind::BatchNorm2d => "batch_norm2d",
            OpKind::Conv2d => "conv2d",
            OpKind::Dropout => "dropout",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

/// Gradient closure: (gradient of this node's output, nodes before this one).
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut [Node])>;

pub(crate) struct Node {
    pub kind: OpKind,
    pub inputs: Vec<usize>,
    numel: usize,
    /// Lazily allocated: empty until some gradient reaches this node.
    pub grad: Vec<f64>,
    backward: Option<BackwardFn>,
    /// For parameter leaves: where to deposit the final gradient.
    sink: Option<Rc<RefCell<Option<Vec<f64>>>>>,
}

impl Node {
    /// Gradient buffer, zero-initialized on first touch.
    pub fn acc(&mut self) -> &mut [f64] {
        if self.grad.is_empty() {
            self.grad = vec![0.0; self.numel];
        }
        &mut self.grad
    }
}

struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Cheap-to-clone handle to a recording tape.
#[derive(Clone)]
pub struct GradTape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradTape {
    pub fn new() -> GradTape {
        GradTape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_tape(&self, other: &GradTape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn check_open(&self) -> Result<()> {
        if self.inner.borrow().consumed {
            Err(TensorError::TapeConsumed)
        } else {
            Ok(())
        }
    }

    /// Attaches a copy of `t` to this tape as a differentiable leaf.
    pub fn var(&self, t: &Tensor) -> Result<Tensor> {
        self.push_leaf(t, None)
    }

    pub(crate) fn push_leaf(
        &self,
        t: &Tensor,
        sink: Option<Rc<RefCell<Option<Vec<f64>>>>>,
    ) -> Result<Tensor> {
        self.check_open()?;
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            kind: OpKind::Leaf,
            inputs: Vec::new(),
            numel: t.numel(),
            grad: Vec::new(),
            backward: None,
            sink,
        });
        Ok(Tensor {
            shape: t.shape.clone(),
            data: t.data_rc(),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        })
    }

    pub(crate) fn push_op(
        &self,
        kind: OpKind,
        inputs: Vec<usize>,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        self.check_open()?;
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            kind,
            inputs,
            numel: data.len(),
            grad: Vec::new(),
            backward: Some(backward),
            sink: None,
        });
        Ok(Tensor {
            shape,
            data,
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        })
    }

    /// Runs reverse accumulation from `loss` (a one-element tensor on this
    /// tape) and deposits parameter gradients into their sinks. Consumes the
    /// tape's ability to record or run backward again.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: loss.shape().to_vec(),
            });
        }
        let root = match &loss.node {
            Some(nref) if nref.tape.same_tape(self) => nref.id,
            Some(_) | None => return Err(TensorError::DetachedTensor),
        };
        self.check_open()?;
        let mut inner = self.inner.borrow_mut();
        inner.consumed = true;
        inner.nodes[root].acc()[0] = 1.0;
        for i in (0..=root).rev() {
            let (before, rest) = inner.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if node.grad.is_empty() {
                continue;
            }
            if let Some(backward) = node.backward.take() {
                backward(&node.grad, before);
            }
        }
        // Every parameter leaf that was bound to the tape ends up with a
        // gradient, zero-filled when the loss never reached it.
        for node in inner.nodes.iter_mut() {
            if let Some(sink) = &node.sink {
                let mut slot = sink.borrow_mut();
                let buf = slot.get_or_insert_with(|| vec![0.0; node.numel]);
                assert_eq!(buf.len(), node.numel, "gradient sink length mismatch");
                for (dst, src) in buf.iter_mut().zip(node.grad.iter()) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    fn node_grad(&self, id: usize, numel: usize) -> Option<Vec<f64>> {
        let inner = self.inner.borrow();
        if !inner.consumed {
            return None;
        }
        let g = &inner.nodes[id].grad;
        if g.is_empty() {
            Some(vec![0.0; numel])
        } else {
            Some(g.clone())
        }
    }

    /// Recorded structure: (op kind, input node ids) in append order.
    pub fn nodes(&self) -> Vec<(OpKind, Vec<usize>)> {
        self.inner
            .borrow()
            .nodes
            .iter()
            .map(|n| (n.kind, n.inputs.clone()))
            .collect()
    }
}

/// A tensor's position on a tape.
#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: GradTape,
    pub id: usize,
}

impl NodeRef {
    pub fn grad(&self, numel: usize) -> Option<Vec<f64>> {
        self.tape.node_grad(self.id, numel)
    }
}

/// Resolves the common tape of an operation's inputs, if any input is
/// tracked. All tracked inputs must share one tape.
pub(crate) fn common_tape(inputs: &[&Tensor]) -> Option<(GradTape, Vec<Option<usize>>)> {
    let mut tape: Option<GradTape> = None;
    let mut ids = Vec::with_capacity(inputs.len());
    for t in inputs {
        match &t.node {
            Some(nref) => {
                match &tape {
                    Some(existing) => assert!(
                        existing.same_tape(&nref.tape),
                        "operands recorded on different tapes"
                    ),
                    None => tape = Some(nref.tape.clone()),
                }
                ids.push(Some(nref.id));
            }
            None => ids.push(None),
        }
    }
    tape.map(|t| (t, ids))
}

/// Per-pass context threaded through model forwards: which tape (if any) to
/// record on, whether stochastic/normalization layers are in training mode,
/// and the RNG that feeds dropout and masking.
pub struct Ctx<'a> {
    pub tape: Option<&'a GradTape>,
    pub training: bool,
    pub rng: Option<&'a mut crate::rng::Rng>,
}

impl<'a> Ctx<'a> {
    pub fn inference() -> Ctx<'static> {
        Ctx {
            tape: None,
            training: false,
            rng: None,
        }
    }

    pub fn train(tape: &'a GradTape, rng: &'a mut crate::rng::Rng) -> Ctx<'a> {
        Ctx {
            tape: Some(tape),
            training: true,
            rng: Some(rng),
        }
    }

    /// Training-mode context without a tape: forward-only but with dropout
    /// and batch statistics active.
    pub fn train_untaped(rng: &'a mut crate::rng::Rng) -> Ctx<'a> {
        Ctx {
            tape: None,
            training: true,
            rng: Some(rng),
        }
    }

    pub fn rng(&mut self) -> &mut crate::rng::Rng {
        self.rng
            .as_deref_mut()
            .expect("this pass needs an RNG (training mode with dropout)")
    }
}
