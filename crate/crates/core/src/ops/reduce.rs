//! Axis reductions: softmax and mean.

use std::rc::Rc;

use super::uninit_buf;
use crate::error::{Result, TensorError};
use crate::tape::{common_tape, OpKind};
use crate::tensor::Tensor;

/// Splits a shape around `axis` into (outer, d, inner) extents so a slice
/// along the axis is addressed as `o * d * inner + j * inner + i`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Tensor {
    /// Softmax along `dim`, computed as exp(x - max) / sum over the axis.
    /// Entries of -inf are legal and produce exact zeros (used for masking)
    /// as long as each slice keeps at least one finite entry.
    pub fn softmax(&self, dim: usize) -> Result<Tensor> {
        let (outer, d, inner) = axis_split(&self.shape, dim)?;
        let x = self.data();
        let mut out = uninit_buf(x.len());
        for o in 0..outer {
            for i in 0..inner {
                let base = o * d * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..d {
                    max = max.max(x[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..d {
                    let e = (x[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..d {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let out = Rc::new(out);
        match common_tape(&[self]) {
            None => Ok(Tensor::from_rc(self.shape.clone(), out)),
            Some((tape, ids)) => {
                let ix = ids[0].unwrap();
                let y = Rc::clone(&out);
                tape.push_op(
                    OpKind::Softmax,
                    vec![ix],
                    self.shape.clone(),
                    out,
                    Box::new(move |g, nodes| {
                        let acc = nodes[ix].acc();
                        for o in 0..outer {
                            for i in 0..inner {
                                let base = o * d * inner + i;
                                let mut dot = 0.0;
                                for j in 0..d {
                                    let k = base + j * inner;
                                    dot += g[k] * y[k];
                                }
                                for j in 0..d {
                                    let k = base + j * inner;
                                    acc[k] += y[k] * (g[k] - dot);
                                }
                            }
                        }
                    }),
                )
            }
        }
    }

    /// Arithmetic mean along `dim`. With `squeeze` the axis is dropped,
    /// otherwise it is kept with extent 1.
    pub fn mean_reduce(&self, dim: usize, squeeze: bool) -> Result<Tensor> {
        let (outer, d, inner) = axis_split(&self.shape, dim)?;
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..d {
                let base = o * d * inner + j * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        let scale = 1.0 / d as f64;
        for v in out.iter_mut() {
            *v *= scale;
        }
        let mut out_shape = self.shape.clone();
        if squeeze {
            out_shape.remove(dim);
        } else {
            out_shape[dim] = 1;
        }
        let out = Rc::new(out);
        match common_tape(&[self]) {
            None => Ok(Tensor::from_rc(out_shape, out)),
            Some((tape, ids)) => {
                let ix = ids[0].unwrap();
                tape.push_op(
                    OpKind::MeanReduce,
                    vec![ix],
                    out_shape,
                    out,
                    Box::new(move |g, nodes| {
                        let acc = nodes[ix].acc();
                        for o in 0..outer {
                            for j in 0..d {
                                let base = o * d * inner + j * inner;
                                for i in 0..inner {
                                    acc[base + i] += g[o * inner + i] * scale;
                                }
                            }
                        }
                    }),
                )
            }
        }
    }
}
