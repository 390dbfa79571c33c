//! Primitive tensor operations with forward values and backward rules.

mod conv;
mod elementwise;
mod loss;
mod matmul;
mod norm;
mod reduce;
mod shape;

pub use conv::conv2d;
pub use elementwise::dropout;
pub use loss::cross_entropy_loss;
pub use norm::{batch_norm2d, layer_norm};
pub use shape::{apply_key_mask, concat};

use crate::error::{Result, TensorError};

/// Allocates an f64 buffer without zero-filling it. Every caller writes all
/// `n` elements before anything reads them (GEMM with beta = 0 never reads
/// its destination; the copy loops cover every index), so the zeroing that
/// `vec![0.0; n]` does is pure overhead on these hot paths.
pub(crate) fn uninit_buf(n: usize) -> Vec<f64> {
    let mut v: Vec<std::mem::MaybeUninit<f64>> = Vec::with_capacity(n);
    // SAFETY: set_len stays within capacity and MaybeUninit needs no init;
    // every f64 bit pattern is a valid value, and callers overwrite all of
    // them before any read.
    unsafe {
        v.set_len(n);
        let mut v = std::mem::ManuallyDrop::new(v);
        Vec::from_raw_parts(v.as_mut_ptr() as *mut f64, v.len(), v.capacity())
    }
}

/// Thin wrapper over the f64 GEMM kernel: C = alpha*A*B + beta*C with
/// explicit row/column strides, so transposed views need no copies.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// How two shapes combine elementwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum BroadcastPlan {
    /// Identical shapes.
    Same,
    /// `b` is a right-aligned exact suffix of `a`: its offset is `i % period`.
    SuffixB { period: usize },
    /// `a` is a right-aligned exact suffix of `b`.
    SuffixA { period: usize },
    /// Full NumPy-style broadcasting via effective strides (0 on size-1 axes).
    General {
        out: Vec<usize>,
        sa: Vec<usize>,
        sb: Vec<usize>,
    },
}

pub(crate) fn broadcast_plan(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Vec<usize>, BroadcastPlan)> {
    if a == b {
        return Ok((a.to_vec(), BroadcastPlan::Same));
    }
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if b.len() < a.len() && a[a.len() - b.len()..] == *b {
        let period = b.iter().product();
        return Ok((a.to_vec(), BroadcastPlan::SuffixB { period }));
    }
    if a.len() < b.len() && b[b.len() - a.len()..] == *a {
        let period = a.iter().product();
        return Ok((b.to_vec(), BroadcastPlan::SuffixA { period }));
    }
    let rank = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| -> usize {
        // Right-aligned; missing leading dims count as 1.
        if i + s.len() >= rank {
            s[i + s.len() - rank]
        } else {
            1
        }
    };
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let (da, db) = (dim(a, i), dim(b, i));
        if da != db && da != 1 && db != 1 {
            return Err(mismatch());
        }
        out[i] = da.max(db);
    }
    let eff = |s: &[usize]| -> Vec<usize> {
        let strides = crate::tensor::strides_of(s);
        (0..rank)
            .map(|i| {
                let d = dim(s, i);
                if d == 1 {
                    0
                } else {
                    strides[i + s.len() - rank]
                }
            })
            .collect()
    };
    let (sa, sb) = (eff(a), eff(b));
    Ok((out.clone(), BroadcastPlan::General { out, sa, sb }))
}

/// Visits every element of the broadcast output exactly once:
/// `f(out_index, a_index, b_index)`.
pub(crate) fn zip_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    let mut coords = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    for out_idx in 0..n {
        f(out_idx, ao, bo);
        // Odometer increment from the last axis.
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            ao += sa[axis];
            bo += sb[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            ao -= sa[axis] * out_shape[axis];
            bo -= sb[axis] * out_shape[axis];
            coords[axis] = 0;
        }
    }
}
