//! Miniature BERT-style text encoder.

use mmfs_core::nn::{Embedding, EncoderLayer, Linear};
use serde::{Deserialize, Serialize};
use mmfs_core::ops;
use mmfs_core::{BoolTensor, Ctx, IntTensor, Parameter, Rng, Tensor, TensorError};

use crate::error::Result;

/// How the pooled feature vector is made from the hidden states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    /// tanh(pooler(H[:,0])) over the [CLS] position.
    Cls,
    /// tanh(pooler(masked mean over live positions)); ablation switch.
    Mean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub pooling: Pooling,
}

impl TextEncoderConfig {
    /// Sized for minutes-scale runs: d=64, 4 heads, 2 layers, 32 positions.
    pub fn desk(vocab_size: usize) -> TextEncoderConfig {
        TextEncoderConfig {
            vocab_size,
            embed_dim: 64,
            num_heads: 4,
            num_layers: 2,
            max_seq_len: 32,
            dropout: 0.1,
            pooling: Pooling::Cls,
        }
    }

    /// The reference hyperparameters: 768-wide embeddings, 12 heads,
    /// dropout 0.1 (12 layers / 128 positions filled in as the conventional
    /// values for this family).
    pub fn paper(vocab_size: usize) -> TextEncoderConfig {
        TextEncoderConfig {
            vocab_size,
            embed_dim: 768,
            num_heads: 12,
            num_layers: 12,
            max_seq_len: 128,
            dropout: 0.1,
            pooling: Pooling::Cls,
        }
    }

    pub fn validate(&self) {
        assert!(self.vocab_size >= 5, "vocab must include the reserved ids");
        assert!(
            self.embed_dim % self.num_heads == 0,
            "embed_dim {} not divisible by num_heads {}",
            self.embed_dim,
            self.num_heads
        );
        assert!(self.max_seq_len >= 2, "max_seq_len must be at least 2");
    }
}

/// Hidden states and pooled feature for a batch of token sequences.
#[derive(Debug, Clone)]
pub struct EncodedText {
    /// [B, S, d] final-layer states.
    pub hidden: Tensor,
    /// [B, d] pooled feature vector.
    pub pooled: Tensor,
    /// [B, S] true on live (non-pad) positions.
    pub mask: BoolTensor,
}

#[derive(Debug)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub token_emb: Embedding,
    pub pos_emb: Embedding,
    pub seg_emb: Embedding,
    pub layers: Vec<EncoderLayer>,
    pub pooler: Linear,
    /// Masked-token prediction head (pretraining only).
    pub mlm_head: Linear,
    /// Next-sentence head over two pooled features (pretraining only).
    pub nsp_head: Linear,
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig, rng: &mut Rng) -> TextEncoder {
        config.validate();
        let d = config.embed_dim;
        let layers = (0..config.num_layers)
            .map(|i| EncoderLayer::new(&format!("text.layer{i}"), d, config.num_heads, config.dropout, rng))
            .collect();
        TextEncoder {
            token_emb: Embedding::new("text.tok", config.vocab_size, d, rng),
            pos_emb: Embedding::new("text.pos", config.max_seq_len, d, rng),
            seg_emb: Embedding::new("text.seg", 2, d, rng),
            pooler: Linear::new("text.pooler", d, d, rng),
            mlm_head: Linear::new("text.mlm", d, config.vocab_size, rng),
            nsp_head: Linear::new("text.nsp", 2 * d, 1, rng),
            layers,
            config,
        }
    }

    /// Everything fusion training updates (embeddings, layers, pooler).
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        out.extend(self.token_emb.parameters());
        out.extend(self.pos_emb.parameters());
        out.extend(self.seg_emb.parameters());
        for layer in &self.layers {
            out.extend(layer.parameters());
        }
        out.extend(self.pooler.parameters());
        out
    }

    /// Parameters including the MLM and NSP heads.
    pub fn pretrain_parameters(&self) -> Vec<Parameter> {
        let mut out = self.parameters();
        out.extend(self.mlm_head.parameters());
        out.extend(self.nsp_head.parameters());
        out
    }

    /// Runs the encoder stack: token + position + segment embeddings, then
    /// the transformer layers with key masking, then pooling.
    pub fn encode(&self, ctx: &mut Ctx, ids: &IntTensor, mask: &BoolTensor) -> Result<EncodedText> {
        if ids.shape.len() != 2 || ids.shape != mask.shape {
            return Err(TensorError::ShapeMismatch {
                op: "encode_text",
                lhs: ids.shape.clone(),
                rhs: mask.shape.clone(),
            }
            .into());
        }
        let (b, s) = (ids.shape[0], ids.shape[1]);
        if s > self.config.max_seq_len {
            return Err(TensorError::IndexOutOfRange {
                index: s as i64,
                bound: self.config.max_seq_len,
            }
            .into());
        }
        let tok = self.token_emb.forward(ctx.tape, ids)?; // [B,S,d]
        let positions = IntTensor::from_vec(vec![s], (0..s as i64).collect());
        let pos = self.pos_emb.forward(ctx.tape, &positions)?; // [S,d]
        let seg = self
            .seg_emb
            .forward(ctx.tape, &IntTensor::from_vec(vec![1], vec![0]))?
            .reshape(vec![self.config.embed_dim])?; // [d]
        let mut x = tok.add(&pos)?.add(&seg)?;
        if ctx.training && self.config.dropout > 0.0 {
            x = ops::dropout(&x, self.config.dropout, true, ctx.rng())?;
        }
        for layer in &self.layers {
            x = layer.forward(ctx, &x, Some(mask))?;
        }
        let pooled = self.pool(ctx, &x, mask, b, s)?;
        Ok(EncodedText {
            hidden: x,
            pooled,
            mask: mask.clone(),
        })
    }

    fn pool(&self, ctx: &Ctx, hidden: &Tensor, mask: &BoolTensor, b: usize, s: usize) -> Result<Tensor> {
        let d = self.config.embed_dim;
        let summary = match self.config.pooling {
            Pooling::Cls => {
                let cls_rows: Vec<usize> = (0..b).map(|bi| bi * s).collect();
                hidden.reshape(vec![b * s, d])?.gather_rows(&cls_rows)?
            }
            Pooling::Mean => {
                // Average over live positions only.
                let mut weights = vec![0.0; b * s];
                for bi in 0..b {
                    let row = &mask.data[bi * s..(bi + 1) * s];
                    let live = row.iter().filter(|&&m| m).count().max(1) as f64;
                    for (si, &m) in row.iter().enumerate() {
                        if m {
                            weights[bi * s + si] = 1.0 / live;
                        }
                    }
                }
                let w = Tensor::from_vec(vec![b, s, 1], weights);
                hidden.mul(&w)?.mean_reduce(1, true)?.scale(s as f64)?
            }
        };
        self.pooler.forward(ctx.tape, &summary)?.tanh().map_err(Into::into)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::{tokenize, Vocab};

    fn tiny_encoder(seed: u64) -> (TextEncoder, Vocab) {
        let vocab = Vocab::build(&["alpha beta gamma delta epsilon zeta"], 1, 64).unwrap();
        let mut rng = Rng::new(seed);
        let config = TextEncoderConfig {
            vocab_size: vocab.size(),
            embed_dim: 16,
            num_heads: 2,
            num_layers: 2,
            max_seq_len: 8,
            dropout: 0.0,
            pooling: Pooling::Cls,
        };
        (TextEncoder::new(config, &mut rng), vocab)
    }

    fn batch(vocab: &Vocab, texts: &[&str], s: usize) -> (IntTensor, BoolTensor) {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        for t in texts {
            let (i, m) = tokenize(t, vocab, s);
            ids.extend(i.data);
            mask.extend(m.data);
        }
        (
            IntTensor::from_vec(vec![texts.len(), s], ids),
            BoolTensor::from_vec(vec![texts.len(), s], mask),
        )
    }

    #[test]
    fn shape_contract() {
        let (enc, vocab) = tiny_encoder(0);
        let (ids, mask) = batch(&vocab, &["alpha beta", "gamma"], 8);
        let out = enc.encode(&mut Ctx::inference(), &ids, &mask).unwrap();
        assert_eq!(out.hidden.shape(), &[2, 8, 16]);
        assert_eq!(out.pooled.shape(), &[2, 16]);
    }

    #[test]
    fn pad_content_cannot_leak_into_live_positions() {
        let (enc, vocab) = tiny_encoder(1);
        let (ids, mask) = batch(&vocab, &["alpha beta gamma"], 8);
        let out1 = enc.encode(&mut Ctx::inference(), &ids, &mask).unwrap();

        // Overwrite pad ids with arbitrary other tokens, keeping the mask.
        let mut corrupted = ids.clone();
        for (i, &m) in mask.data.iter().enumerate() {
            if !m {
                corrupted.data[i] = vocab.id_of("zeta");
            }
        }
        let out2 = enc.encode(&mut Ctx::inference(), &corrupted, &mask).unwrap();
        for (i, &m) in mask.data.iter().enumerate() {
            if m {
                for j in 0..16 {
                    let a = out1.hidden.data()[i * 16 + j];
                    let b = out2.hidden.data()[i * 16 + j];
                    assert!((a - b).abs() < 1e-12, "live position {i} moved");
                }
            }
        }
        for (a, b) in out1.pooled.data().iter().zip(out2.pooled.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_permutation_equivariance() {
        let (enc, vocab) = tiny_encoder(2);
        let texts = ["alpha beta", "gamma delta epsilon", "zeta"];
        let (ids, mask) = batch(&vocab, &texts, 8);
        let fwd = enc.encode(&mut Ctx::inference(), &ids, &mask).unwrap();

        let permuted = ["zeta", "alpha beta", "gamma delta epsilon"];
        let (ids_p, mask_p) = batch(&vocab, &permuted, 8);
        let fwd_p = enc.encode(&mut Ctx::inference(), &ids_p, &mask_p).unwrap();

        // Row b of the permuted output equals row perm[b] of the original.
        let perm = [2usize, 0, 1];
        for (new_row, &old_row) in perm.iter().enumerate() {
            for j in 0..16 {
                let a = fwd_p.pooled.data()[new_row * 16 + j];
                let b = fwd.pooled.data()[old_row * 16 + j];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooled_is_pooler_of_cls_state() {
        let (enc, vocab) = tiny_encoder(3);
        let (ids, mask) = batch(&vocab, &["alpha beta gamma", "delta"], 8);
        let out = enc.encode(&mut Ctx::inference(), &ids, &mask).unwrap();
        // Recompute: tanh(pooler(H[:,0])).
        let cls = out
            .hidden
            .reshape(vec![2 * 8, 16])
            .unwrap()
            .gather_rows(&[0, 8])
            .unwrap();
        let again = enc.pooler.forward(None, &cls).unwrap().tanh().unwrap();
        for (a, b) in out.pooled.data().iter().zip(again.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mean_pooling_switch_works() {
        let (mut enc, vocab) = tiny_encoder(4);
        enc.config.pooling = Pooling::Mean;
        let (ids, mask) = batch(&vocab, &["alpha beta", "gamma delta epsilon zeta"], 8);
        let out = enc.encode(&mut Ctx::inference(), &ids, &mask).unwrap();
        assert_eq!(out.pooled.shape(), &[2, 16]);
        assert!(out.pooled.is_finite());
    }

    #[test]
    fn gradient_reaches_every_encoder_parameter() {
        let (enc, vocab) = tiny_encoder(5);
        let (ids, mask) = batch(&vocab, &["alpha beta gamma", "delta zeta"], 8);
        let tape = mmfs_core::GradTape::new();
        let mut rng = Rng::new(9);
        let mut ctx = Ctx::train(&tape, &mut rng);
        let out = enc.encode(&mut ctx, &ids, &mask).unwrap();
        // Cross-entropy over a weighted readout of the pooled feature.
        let w = Tensor::randn(vec![16, 3], 0.0, 1.0, &mut Rng::new(10));
        let logits = out.pooled.matmul(&w).unwrap();
        let loss = ops::cross_entropy_loss(&logits, &[0, 2]).unwrap();
        tape.backward(&loss).unwrap();
        for p in enc.parameters() {
            let g = p.grad().expect("populated");
            let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "zero gradient for {}", p.name());
        }
    }

    #[test]
    fn rejects_overlong_sequences() {
        let (enc, vocab) = tiny_encoder(6);
        let (ids, mask) = batch(&vocab, &["alpha beta"], 16);
        assert!(enc.encode(&mut Ctx::inference(), &ids, &mask).is_err());
    }
}
