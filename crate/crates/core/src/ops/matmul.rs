//! Batched matrix multiplication with broadcasting over leading axes.

use std::rc::Rc;

use super::{gemm, uninit_buf};
use crate::error::{Result, TensorError};
use crate::tape::{common_tape, OpKind};
use crate::tensor::Tensor;

/// Offsets (in units of one matrix) of each operand for every output batch
/// index, under right-aligned broadcasting of the leading axes.
fn batch_offsets(lead_out: &[usize], lead_in: &[usize]) -> Vec<usize> {
    let batches: usize = lead_out.iter().product();
    let rank = lead_out.len();
    let strides_in = crate::tensor::strides_of(lead_in);
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i + lead_in.len() < rank {
                return 0;
            }
            let j = i + lead_in.len() - rank;
            if lead_in[j] == 1 {
                0
            } else {
                strides_in[j]
            }
        })
        .collect();
    let mut out = Vec::with_capacity(batches);
    let mut coords = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..batches {
        out.push(off);
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            off += eff[axis];
            if coords[axis] < lead_out[axis] {
                break;
            }
            off -= eff[axis] * lead_out[axis];
            coords[axis] = 0;
        }
    }
    out
}

impl Tensor {
    /// Matrix product over the two trailing axes; leading axes broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        };
        if self.rank() < 2 || other.rank() < 2 {
            return Err(mismatch());
        }
        let (m, ka) = (self.shape[self.rank() - 2], self.shape[self.rank() - 1]);
        let (kb, n) = (other.shape[other.rank() - 2], other.shape[other.rank() - 1]);
        if ka != kb {
            return Err(mismatch());
        }
        let k = ka;
        let lead_a = &self.shape[..self.rank() - 2];
        let lead_b = &other.shape[..other.rank() - 2];
        let rank = lead_a.len().max(lead_b.len());
        let dim = |s: &[usize], i: usize| -> Option<usize> {
            if i + s.len() >= rank {
                Some(s[i + s.len() - rank])
            } else {
                Some(1)
            }
        };
        let mut lead_out = vec![0usize; rank];
        for i in 0..rank {
            let (da, db) = (dim(lead_a, i).unwrap(), dim(lead_b, i).unwrap());
            if da != db && da != 1 && db != 1 {
                return Err(mismatch());
            }
            lead_out[i] = da.max(db);
        }
        let batches: usize = lead_out.iter().product();
        let offs_a = batch_offsets(&lead_out, lead_a);
        let offs_b = batch_offsets(&lead_out, lead_b);

        let mut out = uninit_buf(batches * m * n);
        for bi in 0..batches {
            let a = &self.data[offs_a[bi] * m * k..offs_a[bi] * m * k + m * k];
            let b = &other.data[offs_b[bi] * k * n..offs_b[bi] * k * n + k * n];
            gemm(
                m,
                k,
                n,
                1.0,
                a,
                k as isize,
                1,
                b,
                n as isize,
                1,
                0.0,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut out_shape = lead_out;
        out_shape.push(m);
        out_shape.push(n);
        let out = Rc::new(out);

        match common_tape(&[self, other]) {
            None => Ok(Tensor::from_rc(out_shape, out)),
            Some((tape, ids)) => {
                let (ia, ib) = (ids[0], ids[1]);
                let a_data = self.data_rc();
                let b_data = other.data_rc();
                let tracked: Vec<usize> = ids.iter().flatten().copied().collect();
                tape.push_op(
                    OpKind::MatMul,
                    tracked,
                    out_shape,
                    out,
                    Box::new(move |g, nodes| {
                        for bi in 0..batches {
                            let go = &g[bi * m * n..(bi + 1) * m * n];
                            if let Some(ia) = ia {
                                // dA += dC * B^T
                                let b = &b_data[offs_b[bi] * k * n..offs_b[bi] * k * n + k * n];
                                let ga = nodes[ia].acc();
                                let dst = &mut ga[offs_a[bi] * m * k..offs_a[bi] * m * k + m * k];
                                gemm(m, n, k, 1.0, go, n as isize, 1, b, 1, n as isize, 1.0, dst);
                            }
                            if let Some(ib) = ib {
                                // dB += A^T * dC
                                let a = &a_data[offs_a[bi] * m * k..offs_a[bi] * m * k + m * k];
                                let gb = nodes[ib].acc();
                                let dst = &mut gb[offs_b[bi] * k * n..offs_b[bi] * k * n + k * n];
                                gemm(k, m, n, 1.0, a, 1, k as isize, go, n as isize, 1, 1.0, dst);
                            }
                        }
                    }),
                )
            }
        }
    }
}
