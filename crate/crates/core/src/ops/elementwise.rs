//! Elementwise arithmetic, activations, scalar ops, and dropout.

use std::rc::Rc;

use super::{broadcast_plan, zip_broadcast, BroadcastPlan};
use crate::error::{Result, TensorError};
use crate::rng::Rng;
use crate::tape::{common_tape, OpKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

impl BinKind {
    fn op_kind(self) -> OpKind {
        match self {
            BinKind::Add => OpKind::Add,
            BinKind::Sub => OpKind::Sub,
            BinKind::Mul => OpKind::Mul,
        }
    }

    fn name(self) -> &'static str {
        self.op_kind().name()
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinKind::Add => a + b,
            BinKind::Sub => a - b,
            BinKind::Mul => a * b,
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: BinKind) -> Result<Tensor> {
    let (out_shape, plan) = broadcast_plan(kind.name(), a.shape(), b.shape())?;
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    match &plan {
        BroadcastPlan::Same => {
            for i in 0..n {
                out[i] = kind.apply(a.data()[i], b.data()[i]);
            }
        }
        BroadcastPlan::SuffixB { period } => {
            let bd = b.data();
            for (chunk, av) in out.chunks_mut(*period).zip(a.data().chunks(*period)) {
                for j in 0..*period {
                    chunk[j] = kind.apply(av[j], bd[j]);
                }
            }
        }
        BroadcastPlan::SuffixA { period } => {
            let ad = a.data();
            for (chunk, bv) in out.chunks_mut(*period).zip(b.data().chunks(*period)) {
                for j in 0..*period {
                    chunk[j] = kind.apply(ad[j], bv[j]);
                }
            }
        }
        BroadcastPlan::General { out: os, sa, sb } => {
            let (ad, bd) = (a.data(), b.data());
            zip_broadcast(os, sa, sb, |o, ai, bi| out[o] = kind.apply(ad[ai], bd[bi]));
        }
    }
    let out = Rc::new(out);

    match common_tape(&[a, b]) {
        None => Ok(Tensor::from_rc(out_shape, out)),
        Some((tape, ids)) => {
            let (ia, ib) = (ids[0], ids[1]);
            let a_data = a.data_rc();
            let b_data = b.data_rc();
            let tracked: Vec<usize> = ids.iter().flatten().copied().collect();
            tape.push_op(
                kind.op_kind(),
                tracked,
                out_shape,
                out,
                Box::new(move |g, nodes| {
                    // d(a+b) = (g, g); d(a-b) = (g, -g); d(a*b) = (g*b, g*a).
                    let route = |gi: usize, is_lhs: bool, nodes: &mut [crate::tape::Node]| {
                        let acc = nodes[gi].acc();
                        let scale_other: Option<&[f64]> = match kind {
                            BinKind::Mul => Some(if is_lhs { &b_data } else { &a_data }),
                            _ => None,
                        };
                        let sign = if !is_lhs && matches!(kind, BinKind::Sub) {
                            -1.0
                        } else {
                            1.0
                        };
                        match &plan {
                            BroadcastPlan::Same => {
                                for i in 0..g.len() {
                                    let w = scale_other.map_or(1.0, |s| s[i]);
                                    acc[i] += sign * g[i] * w;
                                }
                            }
                            // The broadcast side accumulates period-strided
                            // blocks; the full side maps one-to-one.
                            BroadcastPlan::SuffixB { period } => {
                                let full_is_self = is_lhs;
                                for (block, gv) in g.chunks(*period).enumerate() {
                                    let base = block * period;
                                    for (j, &gj) in gv.iter().enumerate() {
                                        let (self_i, other_i) = if full_is_self {
                                            (base + j, j)
                                        } else {
                                            (j, base + j)
                                        };
                                        let w = scale_other.map_or(1.0, |s| s[other_i]);
                                        acc[self_i] += sign * gj * w;
                                    }
                                }
                            }
                            BroadcastPlan::SuffixA { period } => {
                                let full_is_self = !is_lhs;
                                for (block, gv) in g.chunks(*period).enumerate() {
                                    let base = block * period;
                                    for (j, &gj) in gv.iter().enumerate() {
                                        let (self_i, other_i) = if full_is_self {
                                            (base + j, j)
                                        } else {
                                            (j, base + j)
                                        };
                                        let w = scale_other.map_or(1.0, |s| s[other_i]);
                                        acc[self_i] += sign * gj * w;
                                    }
                                }
                            }
                            BroadcastPlan::General { out: os, sa, sb } => {
                                zip_broadcast(os, sa, sb, |o, aix, bix| {
                                    let (self_i, other_i) =
                                        if is_lhs { (aix, bix) } else { (bix, aix) };
                                    let w = scale_other.map_or(1.0, |s| s[other_i]);
                                    acc[self_i] += sign * g[o] * w;
                                });
                            }
                        }
                    };
                    if let Some(ia) = ia {
                        route(ia, true, nodes);
                    }
                    if let Some(ib) = ib {
                        route(ib, false, nodes);
                    }
                }),
            )
        }
    }
}

fn unary(
    x: &Tensor,
    kind: OpKind,
    forward: impl Fn(f64) -> f64,
    // dy/dx expressed from (x, y) so sigmoid/tanh can reuse the output.
    derive: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    let out: Vec<f64> = x.data().iter().map(|&v| forward(v)).collect();
    let out = Rc::new(out);
    match common_tape(&[x]) {
        None => Ok(Tensor::from_rc(x.shape().to_vec(), out)),
        Some((tape, ids)) => {
            let ix = ids[0].unwrap();
            let x_data = x.data_rc();
            let y_data = Rc::clone(&out);
            tape.push_op(
                kind,
                vec![ix],
                x.shape().to_vec(),
                out,
                Box::new(move |g, nodes| {
                    let acc = nodes[ix].acc();
                    for i in 0..g.len() {
                        acc[i] += g[i] * derive(x_data[i], y_data[i]);
                    }
                }),
            )
        }
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinKind::Mul)
    }

    pub fn relu(&self) -> Result<Tensor> {
        unary(self, OpKind::Relu, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        unary(self, OpKind::Sigmoid, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Result<Tensor> {
        unary(self, OpKind::Tanh, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        unary(self, OpKind::Scale, |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        unary(self, OpKind::AddScalar, |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        let out = Rc::new(vec![s]);
        match common_tape(&[self]) {
            None => Ok(Tensor::from_rc(vec![], out)),
            Some((tape, ids)) => {
                let ix = ids[0].unwrap();
                tape.push_op(
                    OpKind::SumAll,
                    vec![ix],
                    vec![],
                    out,
                    Box::new(move |g, nodes| {
                        let g0 = g[0];
                        for v in nodes[ix].acc().iter_mut() {
                            *v += g0;
                        }
                    }),
                )
            }
        }
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }
}

/// Inverted dropout: zero each element with probability `p` and scale the
/// survivors by 1/(1-p) in training mode; identity in inference mode.
pub fn dropout(x: &Tensor, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidProbability(p));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.bernoulli(p) { 0.0 } else { keep_scale })
        .collect();
    let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    let out = Rc::new(out);
    match common_tape(&[x]) {
        None => Ok(Tensor::from_rc(x.shape().to_vec(), out)),
        Some((tape, ids)) => {
            let ix = ids[0].unwrap();
            tape.push_op(
                OpKind::Dropout,
                vec![ix],
                x.shape().to_vec(),
                out,
                Box::new(move |g, nodes| {
                    let acc = nodes[ix].acc();
                    for i in 0..g.len() {
                        acc[i] += g[i] * mask[i];
                    }
                }),
            )
        }
    }
}
