//! Layer normalization and 2-D batch normalization.

use std::rc::Rc;

use super::uninit_buf;
use crate::error::{Result, TensorError};
use crate::tape::{common_tape, OpKind};
use crate::tensor::Tensor;

/// Normalizes the last axis to mean 0 / variance 1, then applies the affine
/// transform `gamma * xhat + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 || gamma.numel() != d || beta.numel() != d {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let rows = x.numel() / d;
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = uninit_buf(x.numel());
    let mut xhat = uninit_buf(x.numel());
    let mut inv_std = uninit_buf(rows);
    for r in 0..rows {
        let row = &xd[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[r] = istd;
        for j in 0..d {
            let h = (row[j] - mean) * istd;
            xhat[r * d + j] = h;
            out[r * d + j] = gd[j] * h + bd[j];
        }
    }
    let out = Rc::new(out);
    match common_tape(&[x, gamma, beta]) {
        None => Ok(Tensor::from_rc(x.shape().to_vec(), out)),
        Some((tape, ids)) => {
            let (ix, ig, ib) = (ids[0], ids[1], ids[2]);
            let tracked: Vec<usize> = ids.iter().flatten().copied().collect();
            let gd = gamma.data_rc();
            tape.push_op(
                OpKind::LayerNorm,
                tracked,
                x.shape().to_vec(),
                out,
                Box::new(move |g, nodes| {
                    if let Some(ix) = ix {
                        let acc = nodes[ix].acc();
                        for r in 0..rows {
                            let base = r * d;
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for j in 0..d {
                                let dxh = g[base + j] * gd[j];
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xhat[base + j];
                            }
                            mean_dxhat /= d as f64;
                            mean_dxhat_xhat /= d as f64;
                            for j in 0..d {
                                let dxh = g[base + j] * gd[j];
                                acc[base + j] += inv_std[r]
                                    * (dxh - mean_dxhat - xhat[base + j] * mean_dxhat_xhat);
                            }
                        }
                    }
                    if let Some(ig) = ig {
                        let acc = nodes[ig].acc();
                        for r in 0..rows {
                            for j in 0..d {
                                acc[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    }
                    if let Some(ib) = ib {
                        let acc = nodes[ib].acc();
                        for r in 0..rows {
                            for j in 0..d {
                                acc[j] += g[r * d + j];
                            }
                        }
                    }
                }),
            )
        }
    }
}

/// Batch normalization over [B,C,H,W]. In training mode the batch statistics
/// normalize and update the running statistics in place; in inference mode
/// the running statistics normalize and nothing is mutated.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut [f64],
    running_var: &mut [f64],
    training: bool,
    eps: f64,
    momentum: f64,
) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm2d",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if gamma.numel() != c || beta.numel() != c || running_mean.len() != c || running_var.len() != c
    {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm2d",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let per_channel = b * h * w;
    if training && per_channel < 2 {
        return Err(TensorError::DegenerateBatch);
    }
    let plane = h * w;
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    if training {
        for ci in 0..c {
            let mut sum = 0.0;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                sum += xd[base..base + plane].iter().sum::<f64>();
            }
            let m = sum / per_channel as f64;
            let mut v = 0.0;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                v += xd[base..base + plane].iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            }
            mean[ci] = m;
            var[ci] = v / per_channel as f64;
            running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean[ci];
            running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * var[ci];
        }
    } else {
        mean.copy_from_slice(running_mean);
        var.copy_from_slice(running_var);
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = uninit_buf(x.numel());
    let mut xhat = uninit_buf(x.numel());
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            for i in 0..plane {
                let hh = (xd[base + i] - mean[ci]) * inv_std[ci];
                xhat[base + i] = hh;
                out[base + i] = gd[ci] * hh + bd[ci];
            }
        }
    }
    let out = Rc::new(out);
    match common_tape(&[x, gamma, beta]) {
        None => Ok(Tensor::from_rc(x.shape().to_vec(), out)),
        Some((tape, ids)) => {
            let (ix, ig, ibeta) = (ids[0], ids[1], ids[2]);
            let tracked: Vec<usize> = ids.iter().flatten().copied().collect();
            let gd = gamma.data_rc();
            tape.push_op(
                OpKind::BatchNorm2d,
                tracked,
                x.shape().to_vec(),
                out,
                Box::new(move |g, nodes| {
                    let n = per_channel as f64;
                    if let Some(ix) = ix {
                        let acc = nodes[ix].acc();
                        for ci in 0..c {
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xhat = 0.0;
                            for bi in 0..b {
                                let base = (bi * c + ci) * plane;
                                for i in 0..plane {
                                    let dxh = g[base + i] * gd[ci];
                                    sum_dxhat += dxh;
                                    sum_dxhat_xhat += dxh * xhat[base + i];
                                }
                            }
                            for bi in 0..b {
                                let base = (bi * c + ci) * plane;
                                for i in 0..plane {
                                    let dxh = g[base + i] * gd[ci];
                                    let dx = if training {
                                        // Batch statistics depend on x.
                                        inv_std[ci]
                                            * (dxh
                                                - sum_dxhat / n
                                                - xhat[base + i] * sum_dxhat_xhat / n)
                                    } else {
                                        // Running statistics are constants.
                                        dxh * inv_std[ci]
                                    };
                                    acc[base + i] += dx;
                                }
                            }
                        }
                    }
                    if let Some(ig) = ig {
                        let acc = nodes[ig].acc();
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * plane;
                                for i in 0..plane {
                                    acc[ci] += g[base + i] * xhat[base + i];
                                }
                            }
                        }
                    }
                    if let Some(ibeta) = ibeta {
                        let acc = nodes[ibeta].acc();
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * plane;
                                for i in 0..plane {
                                    acc[ci] += g[base + i];
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

    #[test]
    fn layer_norm_of_constant_row_is_beta() {
        let x = Tensor::full(vec![2, 4], 3.0);
        let gamma = Tensor::ones(vec![4]);
        let beta = Tensor::zeros(vec![4]);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean() {
        let mut rng = crate::rng::Rng::new(8);
        let x = Tensor::randn(vec![3, 5], 1.0, 2.0, &mut rng);
        let y = layer_norm(&x, &Tensor::ones(vec![5]), &Tensor::zeros(vec![5]), 1e-5).unwrap();
        for r in 0..3 {
            let mean: f64 = y.data()[r * 5..(r + 1) * 5].iter().sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-9, "row mean {mean}");
        }
    }

    #[test]
    fn layer_norm_rejects_mismatched_affine() {
        let x = Tensor::ones(vec![2, 4]);
        let bad = Tensor::ones(vec![3]);
        assert!(layer_norm(&x, &bad, &bad, 1e-5).is_err());
    }

    #[test]
    fn batch_norm_inference_with_unit_stats_is_identity() {
        let mut rng = crate::rng::Rng::new(1);
        let x = Tensor::randn(vec![2, 3, 2, 2], 0.0, 1.0, &mut rng);
        let gamma = Tensor::ones(vec![3]);
        let beta = Tensor::zeros(vec![3]);
        let mut rm = vec![0.0; 3];
        let mut rv = vec![1.0; 3];
        let y = batch_norm2d(&x, &gamma, &beta, &mut rm, &mut rv, false, 0.0, 0.1).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_training_centers_each_channel() {
        let mut rng = crate::rng::Rng::new(2);
        let x = Tensor::randn(vec![4, 3, 5, 5], 2.0, 3.0, &mut rng);
        let gamma = Tensor::ones(vec![3]);
        let beta = Tensor::zeros(vec![3]);
        let mut rm = vec![0.0; 3];
        let mut rv = vec![1.0; 3];
        let y = batch_norm2d(&x, &gamma, &beta, &mut rm, &mut rv, true, 1e-5, 0.1).unwrap();
        for ci in 0..3 {
            let mut sum = 0.0;
            for bi in 0..4 {
                let base = (bi * 3 + ci) * 25;
                sum += y.data()[base..base + 25].iter().sum::<f64>();
            }
            assert!((sum / 100.0).abs() < 1e-6, "channel mean {}", sum / 100.0);
        }
        // Running stats moved toward batch stats.
        assert!(rm.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn batch_norm_training_rejects_single_element_channels() {
        let x = Tensor::ones(vec![1, 2, 1, 1]);
        let gamma = Tensor::ones(vec![2]);
        let beta = Tensor::zeros(vec![2]);
        let mut rm = vec![0.0; 2];
        let mut rv = vec![1.0; 2];
        assert_eq!(
            batch_norm2d(&x, &gamma, &beta, &mut rm, &mut rv, true, 1e-5, 0.1).unwrap_err(),
            TensorError::DegenerateBatch
        );
    }
}
