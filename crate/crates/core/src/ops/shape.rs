//! Shape manipulation: reshape, permute, concat, row gathering, key masking.

use std::rc::Rc;

use super::uninit_buf;
use crate::error::{Result, TensorError};
use crate::tape::{common_tape, OpKind};
use crate::tensor::{strides_of, BoolTensor, Tensor};

impl Tensor {
    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Tensor> {
        if new_shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: new_shape,
            });
        }
        let data = self.data_rc();
        match common_tape(&[self]) {
            None => Ok(Tensor::from_rc(new_shape, data)),
            Some((tape, ids)) => {
                let ix = ids[0].unwrap();
                tape.push_op(
                    OpKind::Reshape,
                    vec![ix],
                    new_shape,
                    data,
                    Box::new(move |g, nodes| {
                        let acc = nodes[ix].acc();
                        for i in 0..g.len() {
                            acc[i] += g[i];
                        }
                    }),
                )
            }
        }
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let valid = perm.len() == rank && {
            let mut seen = vec![false; rank];
            perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true))
        };
        assert!(valid, "invalid permutation {perm:?} for rank {rank}");
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides_of(&self.shape);
        // Stride of each output axis in the input buffer.
        let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = uninit_buf(self.numel());
        permute_gather(self.data(), &mut out, &out_shape, &mapped);
        let out = Rc::new(out);
        let out_shape_bw = out_shape.clone();
        match common_tape(&[self]) {
            None => Ok(Tensor::from_rc(out_shape, out)),
            Some((tape, ids)) => {
                let ix = ids[0].unwrap();
                tape.push_op(
                    OpKind::Permute,
                    vec![ix],
                    out_shape,
                    out,
                    Box::new(move |g, nodes| {
                        permute_scatter_add(g, nodes[ix].acc(), &out_shape_bw, &mapped);
                    }),
                )
            }
        }
    }

    /// Gathers rows along axis 0; duplicates accumulate gradient.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                lhs: self.shape.clone(),
                rhs: vec![idx.len()],
            });
        }
        let rows = self.shape[0];
        let row_len: usize = self.shape[1..].iter().product();
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    index: i as i64,
                    bound: rows,
                });
            }
        }
        let mut out = Vec::with_capacity(idx.len() * row_len);
        for &i in idx {
            out.extend_from_slice(&self.data()[i * row_len..(i + 1) * row_len]);
        }
        let mut out_shape = vec![idx.len()];
        out_shape.extend_from_slice(&self.shape[1..]);
        let out = Rc::new(out);
        match common_tape(&[self]) {
            None => Ok(Tensor::from_rc(out_shape, out)),
            Some((tape, ids)) => {
                let ix = ids[0].unwrap();
                let idx = idx.to_vec();
                tape.push_op(
                    OpKind::GatherRows,
                    vec![ix],
                    out_shape,
                    out,
                    Box::new(move |g, nodes| {
                        let acc = nodes[ix].acc();
                        for (t, &i) in idx.iter().enumerate() {
                            let src = &g[t * row_len..(t + 1) * row_len];
                            let dst = &mut acc[i * row_len..(i + 1) * row_len];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }),
                )
            }
        }
    }
}

/// Odometer over every output axis but the last; calls `row` with the input
/// base offset of each innermost run. The innermost axis then moves with a
/// single stride, contiguous whenever the permutation keeps the last axis.
fn permute_rows(out_shape: &[usize], mapped: &[usize], mut row: impl FnMut(usize, usize)) {
    let rank = out_shape.len();
    let inner = if rank == 0 { 1 } else { out_shape[rank - 1] };
    let total: usize = out_shape.iter().product::<usize>().max(1);
    let blocks = total / inner;
    let lead = rank.saturating_sub(1);
    let mut coords = vec![0usize; lead];
    let mut base = 0usize;
    for blk in 0..blocks {
        row(blk, base);
        for axis in (0..lead).rev() {
            coords[axis] += 1;
            base += mapped[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            base -= mapped[axis] * out_shape[axis];
            coords[axis] = 0;
        }
    }
}

/// Forward: dst (flat output order) gathers from src at permuted offsets.
fn permute_gather(src: &[f64], dst: &mut [f64], out_shape: &[usize], mapped: &[usize]) {
    let rank = out_shape.len();
    let inner = if rank == 0 { 1 } else { out_shape[rank - 1] };
    let step = if rank == 0 { 1 } else { mapped[rank - 1] };
    permute_rows(out_shape, mapped, |blk, base| {
        let out_row = &mut dst[blk * inner..(blk + 1) * inner];
        if step == 1 {
            out_row.copy_from_slice(&src[base..base + inner]);
        } else {
            let mut at = base;
            for slot in out_row {
                *slot = src[at];
                at += step;
            }
        }
    });
}

/// Backward: gradients in output order scatter-add into input offsets.
fn permute_scatter_add(grad: &[f64], acc: &mut [f64], out_shape: &[usize], mapped: &[usize]) {
    let rank = out_shape.len();
    let inner = if rank == 0 { 1 } else { out_shape[rank - 1] };
    let step = if rank == 0 { 1 } else { mapped[rank - 1] };
    permute_rows(out_shape, mapped, |blk, base| {
        let g_row = &grad[blk * inner..(blk + 1) * inner];
        if step == 1 {
            for (slot, &gv) in acc[base..base + inner].iter_mut().zip(g_row) {
                *slot += gv;
            }
        } else {
            let mut at = base;
            for &gv in g_row {
                acc[at] += gv;
                at += step;
            }
        }
    });
}

/// Concatenates tensors along `dim`; every other extent must match.
pub fn concat(tensors: &[&Tensor], dim: usize) -> Result<Tensor> {
    if tensors.is_empty() {
        return Err(TensorError::EmptyInput { op: "concat" });
    }
    let first = tensors[0];
    if dim >= first.rank() {
        return Err(TensorError::AxisOutOfRange {
            axis: dim,
            rank: first.rank(),
        });
    }
    for t in &tensors[1..] {
        let compatible = t.rank() == first.rank()
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == dim || a == b);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let outer: usize = first.shape()[..dim].iter().product();
    let inner: usize = first.shape()[dim + 1..].iter().product();
    let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[dim]).collect();
    let total: usize = extents.iter().sum();

    let mut out = uninit_buf(outer * total * inner);
    let mut offset = 0usize;
    for (t, &d) in tensors.iter().zip(&extents) {
        for o in 0..outer {
            let src = &t.data()[o * d * inner..(o + 1) * d * inner];
            let dst_base = o * total * inner + offset * inner;
            out[dst_base..dst_base + d * inner].copy_from_slice(src);
        }
        offset += d;
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[dim] = total;
    let out = Rc::new(out);

    let refs: Vec<&Tensor> = tensors.to_vec();
    match common_tape(&refs) {
        None => Ok(Tensor::from_rc(out_shape, out)),
        Some((tape, ids)) => {
            let tracked: Vec<usize> = ids.iter().flatten().copied().collect();
            tape.push_op(
                OpKind::Concat,
                tracked,
                out_shape,
                out,
                Box::new(move |g, nodes| {
                    let mut offset = 0usize;
                    for (slot, &d) in ids.iter().zip(&extents) {
                        if let Some(i) = slot {
                            let acc = nodes[*i].acc();
                            for o in 0..outer {
                                let src_base = o * total * inner + offset * inner;
                                let dst = &mut acc[o * d * inner..(o + 1) * d * inner];
                                for (dv, sv) in dst.iter_mut().zip(&g[src_base..src_base + d * inner])
                                {
                                    *dv += sv;
                                }
                            }
                        }
                        offset += d;
                    }
                }),
            )
        }
    }
}

/// Writes -inf into attention scores at masked key positions so the softmax
/// that follows assigns them exactly zero weight. `scores` is [B,h,Sq,Skv]
/// and `mask` is [B,Skv] with `false` meaning masked.
pub fn apply_key_mask(scores: &Tensor, mask: &BoolTensor) -> Result<Tensor> {
    if scores.rank() != 4 || mask.shape.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "apply_key_mask",
            lhs: scores.shape().to_vec(),
            rhs: mask.shape.clone(),
        });
    }
    let (b, h, sq, skv) = (
        scores.shape()[0],
        scores.shape()[1],
        scores.shape()[2],
        scores.shape()[3],
    );
    if mask.shape != [b, skv] {
        return Err(TensorError::ShapeMismatch {
            op: "apply_key_mask",
            lhs: scores.shape().to_vec(),
            rhs: mask.shape.clone(),
        });
    }
    for bi in 0..b {
        if !mask.data[bi * skv..(bi + 1) * skv].iter().any(|&m| m) {
            return Err(TensorError::AllKeysMasked { batch: bi });
        }
    }
    let mut out = scores.data().to_vec();
    for bi in 0..b {
        let row_mask = &mask.data[bi * skv..(bi + 1) * skv];
        for hi in 0..h {
            for q in 0..sq {
                let base = ((bi * h + hi) * sq + q) * skv;
                for (kx, &keep) in row_mask.iter().enumerate() {
                    if !keep {
                        out[base + kx] = f64::NEG_INFINITY;
                    }
                }
            }
        }
    }
    let out = Rc::new(out);
    match common_tape(&[scores]) {
        None => Ok(Tensor::from_rc(scores.shape().to_vec(), out)),
        Some((tape, ids)) => {
            let ix = ids[0].unwrap();
            let mask_data = mask.data.clone();
            tape.push_op(
                OpKind::ApplyKeyMask,
                vec![ix],
                scores.shape().to_vec(),
                out,
                Box::new(move |g, nodes| {
                    let acc = nodes[ix].acc();
                    for bi in 0..b {
                        let row_mask = &mask_data[bi * skv..(bi + 1) * skv];
                        for hi in 0..h {
                            for q in 0..sq {
                                let base = ((bi * h + hi) * sq + q) * skv;
                                for (kx, &keep) in row_mask.iter().enumerate() {
                                    if keep {
                                        acc[base + kx] += g[base + kx];
                                    }
                                }
                            }
                        }
                    }
                }),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::GradTape;

    #[test]
    fn concat_along_columns() {
        let a = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![1, 2], vec![3.0, 4.0]);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 4]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_of_one_tensor_is_identity() {
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = concat(&[&a], 0).unwrap();
        assert_eq!(c.shape(), a.shape());
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn concat_rejects_empty_and_mismatched() {
        assert!(matches!(
            concat(&[], 0).unwrap_err(),
            TensorError::EmptyInput { op: "concat" }
        ));
        let a = Tensor::ones(vec![2, 2]);
        let b = Tensor::ones(vec![2, 3]);
        assert!(concat(&[&a, &b], 0).is_err());
        assert!(concat(&[&a, &b], 1).is_ok());
    }

    #[test]
    fn concat_backward_routes_to_inputs() {
        let tape = GradTape::new();
        let a = tape.var(&Tensor::from_vec(vec![1, 2], vec![1.0, 2.0])).unwrap();
        let b = tape.var(&Tensor::from_vec(vec![1, 3], vec![3.0, 4.0, 5.0])).unwrap();
        let cat = concat(&[&a, &b], 1).unwrap();
        let w = Tensor::from_vec(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let loss = cat.mul(&w).unwrap().sum_all().unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn permute_transposes() {
        let x = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_roundtrip_restores() {
        let mut rng = crate::rng::Rng::new(2);
        let x = Tensor::randn(vec![2, 3, 4], 0.0, 1.0, &mut rng);
        let y = x.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap();
        assert_eq!(x.data(), y.data());
        assert_eq!(x.shape(), y.shape());
    }

    #[test]
    fn gather_duplicates_rows() {
        let table = Tensor::from_vec(vec![3, 2], vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        let out = table.gather_rows(&[1, 1, 2]).unwrap();
        assert_eq!(out.shape(), &[3, 2]);
        assert_eq!(out.data(), &[10.0, 11.0, 10.0, 11.0, 20.0, 21.0]);
    }

    #[test]
    fn gather_out_of_range_reports_id() {
        let table = Tensor::zeros(vec![3, 2]);
        match table.gather_rows(&[5]).unwrap_err() {
            TensorError::IndexOutOfRange { index, bound } => {
                assert_eq!(index, 5);
                assert_eq!(bound, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn gather_duplicate_rows_accumulate_gradient() {
        let tape = GradTape::new();
        let table = tape.var(&Tensor::ones(vec![3, 2])).unwrap();
        let out = table.gather_rows(&[1, 1]).unwrap();
        let loss = out.sum_all().unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(table.grad().unwrap(), vec![0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn key_mask_kills_scores_and_detects_all_masked() {
        let scores = Tensor::zeros(vec![2, 1, 1, 3]);
        let mask = BoolTensor::from_vec(vec![2, 3], vec![true, false, true, true, true, true]);
        let masked = apply_key_mask(&scores, &mask).unwrap();
        let sm = masked.softmax(3).unwrap();
        assert_eq!(sm.data()[1], 0.0);
        assert!((sm.data()[0] - 0.5).abs() < 1e-15);

        let dead = BoolTensor::from_vec(vec![2, 3], vec![true, true, true, false, false, false]);
        assert_eq!(
            apply_key_mask(&scores, &dead).unwrap_err(),
            TensorError::AllKeysMasked { batch: 1 }
        );
    }
}
