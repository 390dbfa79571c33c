//! Text side: vocabulary, tokenizer, encoder, and pretraining heads.

mod encoder;
mod pretrain;
mod vocab;

pub use encoder::{EncodedText, Pooling, TextEncoder, TextEncoderConfig};
pub use pretrain::{mlm_logits, mlm_mask, nsp_probability, MlmBatch};
pub use vocab::{tokenize, word_tokens, Vocab, CLS, MASK, PAD, RESERVED, SEP, UNK};
