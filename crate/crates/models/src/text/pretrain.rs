//! Masked-language-model corruption and the two pretraining heads.

use mmfs_core::ops;
use mmfs_core::{BoolTensor, Ctx, IntTensor, Rng, Tensor, TensorError};

use super::encoder::TextEncoder;
use super::vocab::{CLS, MASK, PAD, RESERVED, SEP};
use crate::error::{ModelError, Result};

/// Output of [`mlm_mask`]: corrupted ids plus the positions and original ids
/// the model must reconstruct.
#[derive(Debug, Clone)]
pub struct MlmBatch {
    pub corrupted: IntTensor,
    /// (batch row, sequence position) of each prediction target.
    pub positions: Vec<(usize, usize)>,
    pub targets: Vec<i64>,
}

fn eligible(id: i64, live: bool) -> bool {
    live && id != PAD && id != CLS && id != SEP
}

/// Selects each eligible position independently with probability
/// `mask_rate` (forcing at least one), then corrupts selections with the
/// 80/10/10 scheme: `[MASK]`, a random vocabulary id, or left unchanged.
pub fn mlm_mask(
    ids: &IntTensor,
    mask: &BoolTensor,
    vocab_size: usize,
    rng: &mut Rng,
    mask_rate: f64,
) -> Result<MlmBatch> {
    assert_eq!(ids.shape, mask.shape);
    assert_eq!(ids.shape.len(), 2);
    let (b, s) = (ids.shape[0], ids.shape[1]);
    let eligible_positions: Vec<(usize, usize)> = (0..b)
        .flat_map(|bi| (0..s).map(move |si| (bi, si)))
        .filter(|&(bi, si)| eligible(ids.data[bi * s + si], mask.data[bi * s + si]))
        .collect();
    if eligible_positions.is_empty() {
        return Err(ModelError::NoMaskableTokens);
    }
    let mut selected: Vec<(usize, usize)> = eligible_positions
        .iter()
        .copied()
        .filter(|_| rng.bernoulli(mask_rate))
        .collect();
    if selected.is_empty() {
        selected.push(eligible_positions[rng.below(eligible_positions.len())]);
    }
    let mut corrupted = ids.clone();
    let mut targets = Vec::with_capacity(selected.len());
    for &(bi, si) in &selected {
        let idx = bi * s + si;
        targets.push(ids.data[idx]);
        let roll = rng.uniform();
        if roll < 0.8 {
            corrupted.data[idx] = MASK;
        } else if roll < 0.9 {
            let lo = RESERVED.len();
            corrupted.data[idx] = (lo + rng.below(vocab_size - lo)) as i64;
        }
        // else: leave the original token in place.
    }
    Ok(MlmBatch {
        corrupted,
        positions: selected,
        targets,
    })
}

/// Gathers the hidden states at the target positions and applies the MLM
/// head; softmax of each output row is the conditional distribution over the
/// vocabulary for that masked slot.
pub fn mlm_logits(
    hidden: &Tensor,
    positions: &[(usize, usize)],
    encoder: &TextEncoder,
    ctx: &Ctx,
) -> Result<Tensor> {
    let (b, s, d) = (hidden.shape()[0], hidden.shape()[1], hidden.shape()[2]);
    let mut rows = Vec::with_capacity(positions.len());
    for &(bi, si) in positions {
        if bi >= b || si >= s {
            return Err(TensorError::IndexOutOfRange {
                index: (bi * s + si) as i64,
                bound: b * s,
            }
            .into());
        }
        rows.push(bi * s + si);
    }
    let states = hidden.reshape(vec![b * s, d])?.gather_rows(&rows)?;
    encoder.mlm_head.forward(ctx.tape, &states).map_err(Into::into)
}

/// P(IsNext | A, B) = sigmoid(W [F_A; F_B]) for every row of the batch.
pub fn nsp_probability(
    f_a: &Tensor,
    f_b: &Tensor,
    encoder: &TextEncoder,
    ctx: &Ctx,
) -> Result<Tensor> {
    if f_a.shape() != f_b.shape() || f_a.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "nsp_probability",
            lhs: f_a.shape().to_vec(),
            rhs: f_b.shape().to_vec(),
        }
        .into());
    }
    let b = f_a.shape()[0];
    let joint = ops::concat(&[f_a, f_b], 1)?;
    let logit = encoder.nsp_head.forward(ctx.tape, &joint)?;
    logit.reshape(vec![b])?.sigmoid().map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::encoder::{Pooling, TextEncoderConfig};
    use crate::text::vocab::{tokenize, Vocab};

    fn setup() -> (TextEncoder, Vocab) {
        let vocab = Vocab::build(&["one two three four five six seven eight"], 1, 64).unwrap();
        let config = TextEncoderConfig {
            vocab_size: vocab.size(),
            embed_dim: 16,
            num_heads: 2,
            num_layers: 1,
            max_seq_len: 8,
            dropout: 0.0,
            pooling: Pooling::Cls,
        };
        let enc = TextEncoder::new(config, &mut Rng::new(0));
        (enc, vocab)
    }

    fn one_row(vocab: &Vocab, text: &str, s: usize) -> (IntTensor, BoolTensor) {
        let (ids, mask) = tokenize(text, vocab, s);
        (
            IntTensor::from_vec(vec![1, s], ids.data),
            BoolTensor::from_vec(vec![1, s], mask.data),
        )
    }

    #[test]
    fn zero_rate_still_masks_exactly_one() {
        let (_, vocab) = setup();
        let (ids, mask) = one_row(&vocab, "one two three", 8);
        let mut rng = Rng::new(1);
        let out = mlm_mask(&ids, &mask, vocab.size(), &mut rng, 0.0).unwrap();
        assert_eq!(out.positions.len(), 1);
        assert_eq!(out.targets.len(), 1);
    }

    #[test]
    fn specials_are_never_selected() {
        let (_, vocab) = setup();
        let (ids, mask) = one_row(&vocab, "one two three four five", 8);
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let out = mlm_mask(&ids, &mask, vocab.size(), &mut rng, 0.5).unwrap();
            for &(bi, si) in &out.positions {
                let original = ids.data[bi * 8 + si];
                assert!(original != PAD && original != CLS && original != SEP);
                assert!(mask.data[bi * 8 + si]);
            }
        }
    }

    #[test]
    fn all_pad_sequence_has_no_maskable_tokens() {
        let (_, vocab) = setup();
        let (ids, mask) = one_row(&vocab, "", 8);
        let mut rng = Rng::new(3);
        assert!(matches!(
            mlm_mask(&ids, &mask, vocab.size(), &mut rng, 0.15).unwrap_err(),
            ModelError::NoMaskableTokens
        ));
    }

    #[test]
    fn selection_frequency_tracks_mask_rate() {
        let (_, vocab) = setup();
        let (ids, mask) = one_row(&vocab, "one two three four five six seven", 8);
        let eligible = 7usize;
        let mut rng = Rng::new(4);
        let trials = 10_000;
        let mut selected = 0usize;
        for _ in 0..trials {
            let out = mlm_mask(&ids, &mask, vocab.size(), &mut rng, 0.15).unwrap();
            selected += out.positions.len();
        }
        let rate = selected as f64 / (trials * eligible) as f64;
        // Forcing one selection biases the rate up slightly; 0.15 of 7
        // positions means about a third of draws select nothing.
        assert!((rate - 0.15).abs() < 0.05, "observed rate {rate}");
    }

    #[test]
    fn mlm_logits_shape_and_row_normalization() {
        let (enc, vocab) = setup();
        let (ids, mask) = one_row(&vocab, "one two three four", 8);
        let mut ctx = Ctx::inference();
        let encoded = enc.encode(&mut ctx, &ids, &mask).unwrap();
        let logits = mlm_logits(&encoded.hidden, &[(0, 1), (0, 3)], &enc, &ctx).unwrap();
        assert_eq!(logits.shape(), &[2, vocab.size()]);
        let probs = logits.softmax(1).unwrap();
        for r in 0..2 {
            let sum: f64 = probs.data()[r * vocab.size()..(r + 1) * vocab.size()].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mlm_logits_rejects_bad_positions() {
        let (enc, vocab) = setup();
        let (ids, mask) = one_row(&vocab, "one", 8);
        let ctx = Ctx::inference();
        let encoded = enc.encode(&mut Ctx::inference(), &ids, &mask).unwrap();
        assert!(mlm_logits(&encoded.hidden, &[(0, 99)], &enc, &ctx).is_err());
        let _ = vocab;
    }

    #[test]
    fn nsp_is_half_with_zero_head_and_bounded_otherwise() {
        let (enc, _) = setup();
        enc.nsp_head.zero_out();
        let f_a = Tensor::randn(vec![3, 16], 0.0, 1.0, &mut Rng::new(5));
        let f_b = Tensor::randn(vec![3, 16], 0.0, 1.0, &mut Rng::new(6));
        let ctx = Ctx::inference();
        let p = nsp_probability(&f_a, &f_b, &enc, &ctx).unwrap();
        for v in p.data() {
            assert_eq!(*v, 0.5);
        }
        // Any head: output stays strictly inside (0,1).
        let (enc2, _) = setup();
        let p = nsp_probability(&f_a, &f_b, &enc2, &ctx).unwrap();
        for v in p.data() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn nsp_rejects_mismatched_features() {
        let (enc, _) = setup();
        let ctx = Ctx::inference();
        let f_a = Tensor::zeros(vec![2, 16]);
        let f_b = Tensor::zeros(vec![2, 8]);
        assert!(nsp_probability(&f_a, &f_b, &enc, &ctx).is_err());
    }
}
