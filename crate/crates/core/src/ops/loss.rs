//! Cross-entropy loss over class logits.

use std::rc::Rc;

use super::uninit_buf;
use crate::error::{Result, TensorError};
use crate::tape::{common_tape, OpKind};
use crate::tensor::Tensor;

/// Mean over the batch of -log softmax(logits)[label], evaluated through
/// log-sum-exp so huge logits cannot overflow. Returns a scalar tensor whose
/// gradient is (softmax - onehot) / B.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if b == 0 || labels.len() != b {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    for &l in labels {
        if l >= k {
            return Err(TensorError::IndexOutOfRange {
                index: l as i64,
                bound: k,
            });
        }
    }
    let x = logits.data();
    let mut probs = uninit_buf(b * k);
    let mut total = 0.0;
    for r in 0..b {
        let row = &x[r * k..(r + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..k {
            let e = (row[j] - max).exp();
            probs[r * k + j] = e;
            sum += e;
        }
        for j in 0..k {
            probs[r * k + j] /= sum;
        }
        let lse = max + sum.ln();
        total += lse - row[labels[r]];
    }
    let loss = total / b as f64;
    let out = Rc::new(vec![loss]);
    match common_tape(&[logits]) {
        None => Ok(Tensor::from_rc(vec![], out)),
        Some((tape, ids)) => {
            let ix = ids[0].unwrap();
            let labels = labels.to_vec();
            tape.push_op(
                OpKind::CrossEntropy,
                vec![ix],
                vec![],
                out,
                Box::new(move |g, nodes| {
                    let g0 = g[0] / b as f64;
                    let acc = nodes[ix].acc();
                    for r in 0..b {
                        for j in 0..k {
                            let onehot = if labels[r] == j { 1.0 } else { 0.0 };
                            acc[r * k + j] += g0 * (probs[r * k + j] - onehot);
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
    fn confident_correct_prediction_has_tiny_loss() {
        let logits = Tensor::from_vec(vec![1, 3], vec![50.0, 0.0, 0.0]);
        let loss = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss.item() < 1e-9, "loss {}", loss.item());
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::zeros(vec![2, 3]);
        let loss = cross_entropy_loss(&logits, &[0, 2]).unwrap();
        assert!((loss.item() - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_softmax_minus_onehot_over_batch() {
        let tape = crate::tape::GradTape::new();
        let logits = tape.var(&Tensor::zeros(vec![2, 2])).unwrap();
        let loss = cross_entropy_loss(&logits, &[0, 1]).unwrap();
        tape.backward(&loss).unwrap();
        let g = logits.grad().unwrap();
        // softmax is uniform 0.5; (0.5 - onehot)/2.
        let want = [-0.25, 0.25, 0.25, -0.25];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::zeros(vec![1, 3]);
        assert!(matches!(
            cross_entropy_loss(&logits, &[3]).unwrap_err(),
            TensorError::IndexOutOfRange { index: 3, bound: 3 }
        ));
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let logits = Tensor::from_vec(vec![1, 2], vec![1e9, -1e9]);
        let loss = cross_entropy_loss(&logits, &[1]).unwrap();
        assert!(loss.item().is_finite());
    }
}
