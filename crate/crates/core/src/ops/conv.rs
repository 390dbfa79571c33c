//! 2-D convolution (cross-correlation) via im2col and GEMM.
//!
//! The unfolded patch matrices from the forward pass are kept for the
//! backward pass, which needs them for the kernel gradient anyway.

use std::rc::Rc;

use super::{gemm, uninit_buf};
use crate::error::{Result, TensorError};
use crate::tape::{common_tape, OpKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct ConvDims {
    b: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvDims {
    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Unfolds one image [C,H,W] into a patch matrix [C*kh*kw, H'*W'].
/// Writes every output element exactly once (zeros where the window hangs
/// over the padding), so the destination may be uninitialized.
fn im2col(x: &[f64], d: &ConvDims, out: &mut [f64]) {
    let cols = d.cols();
    for ci in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    let out_row = &mut out[row * cols + oy * d.w_out..row * cols + (oy + 1) * d.w_out];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let x_base = (ci * d.h + iy as usize) * d.w;
                    if d.stride == 1 {
                        // ix = ox + kj - pad stays in [0, w) on this span.
                        let ox_lo = d.pad.saturating_sub(kj);
                        let ox_hi = d.w_out.min(d.w + d.pad - kj).max(ox_lo);
                        out_row[..ox_lo].fill(0.0);
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kj - d.pad;
                            out_row[ox_lo..ox_hi].copy_from_slice(
                                &x[x_base + ix_lo..x_base + ix_lo + (ox_hi - ox_lo)],
                            );
                        }
                        out_row[ox_hi..].fill(0.0);
                    } else {
                        for (ox, slot) in out_row.iter_mut().enumerate() {
                            let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                            *slot = if ix < 0 || ix >= d.w as isize {
                                0.0
                            } else {
                                x[x_base + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the image gradient.
fn col2im_add(cols_grad: &[f64], d: &ConvDims, out: &mut [f64]) {
    let cols = d.cols();
    for ci in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let g_base = row * cols + oy * d.w_out;
                    let out_base = (ci * d.h + iy as usize) * d.w;
                    if d.stride == 1 {
                        let ox_lo = d.pad.saturating_sub(kj);
                        let ox_hi = d.w_out.min(d.w + d.pad - kj);
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kj - d.pad;
                            let dst = &mut out[out_base + ix_lo..out_base + ix_lo + (ox_hi - ox_lo)];
                            for (slot, &gv) in dst.iter_mut().zip(&cols_grad[g_base + ox_lo..g_base + ox_hi]) {
                                *slot += gv;
                            }
                        }
                    } else {
                        for ox in 0..d.w_out {
                            let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            out[out_base + ix as usize] += cols_grad[g_base + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of [B,C_in,H,W] with kernels [C_out,C_in,kh,kw], zero
/// padding and uniform stride. Output is [B,C_out,H',W'] with
/// H' = (H + 2*pad - kh) / stride + 1.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    assert!(stride >= 1, "conv2d stride must be >= 1");
    if x.rank() != 4 || weight.rank() != 4 || x.shape()[1] != weight.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(TensorError::KernelTooLarge {
            kernel: (kh, kw),
            padded: (h + 2 * pad, w + 2 * pad),
        });
    }
    let d = ConvDims {
        b,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        stride,
        pad,
        h_out: (h + 2 * pad - kh) / stride + 1,
        w_out: (w + 2 * pad - kw) / stride + 1,
    };
    let cols = d.cols();
    let patch = d.patch();
    let mut out = uninit_buf(b * c_out * cols);
    // Unfold every image; the backward pass reuses these matrices.
    let mut cols_all = uninit_buf(b * patch * cols);
    for bi in 0..b {
        let col = &mut cols_all[bi * patch * cols..(bi + 1) * patch * cols];
        im2col(&x.data()[bi * c_in * h * w..(bi + 1) * c_in * h * w], &d, col);
        gemm(
            c_out,
            patch,
            cols,
            1.0,
            weight.data(),
            patch as isize,
            1,
            col,
            cols as isize,
            1,
            0.0,
            &mut out[bi * c_out * cols..(bi + 1) * c_out * cols],
        );
    }
    let out_shape = vec![b, c_out, d.h_out, d.w_out];
    let out = Rc::new(out);
    match common_tape(&[x, weight]) {
        None => Ok(Tensor::from_rc(out_shape, out)),
        Some((tape, ids)) => {
            let (ix, iw) = (ids[0], ids[1]);
            let tracked: Vec<usize> = ids.iter().flatten().copied().collect();
            let w_data = weight.data_rc();
            tape.push_op(
                OpKind::Conv2d,
                tracked,
                out_shape,
                out,
                Box::new(move |g, nodes| {
                    let mut col_grad = uninit_buf(patch * cols);
                    for bi in 0..d.b {
                        let g_mat = &g[bi * d.c_out * cols..(bi + 1) * d.c_out * cols];
                        let col = &cols_all[bi * patch * cols..(bi + 1) * patch * cols];
                        if let Some(iw) = iw {
                            // dW += dOut * col^T
                            let acc = nodes[iw].acc();
                            gemm(
                                d.c_out,
                                cols,
                                patch,
                                1.0,
                                g_mat,
                                cols as isize,
                                1,
                                col,
                                1,
                                cols as isize,
                                1.0,
                                acc,
                            );
                        }
                        if let Some(ix) = ix {
                            // dCol = W^T * dOut, then scatter back to the image.
                            gemm(
                                patch,
                                d.c_out,
                                cols,
                                1.0,
                                &w_data,
                                1,
                                patch as isize,
                                g_mat,
                                cols as isize,
                                1,
                                0.0,
                                &mut col_grad,
                            );
                            let acc = nodes[ix].acc();
                            col2im_add(
                                &col_grad,
                                &d,
                                &mut acc[bi * d.c_in * d.h * d.w..(bi + 1) * d.c_in * d.h * d.w],
                            );
                        }
                    }
                }),
            )
        }
    }
}
