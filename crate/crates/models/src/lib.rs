//! Model zoo for text+image sentiment classification: a miniature BERT-style
//! text encoder, a miniature residual image encoder, and seven heads — five
//! fusion strategies plus the two unimodal baselines — sharing one
//! interface from encodings to class probabilities.

pub mod bundle;
pub mod check;
pub mod error;
pub mod fusion;
pub mod image;
pub mod oracle;
pub mod text;

pub use bundle::{SentimentModel, StateEntry};
pub use error::{ModelError, Result};
pub use fusion::{
    fuse_probabilities, predict_label, Classifier, FusionConfig, FusionKind, FusionModel,
    FusionOutput,
};
pub use image::{
    BlockKind, EncodedImage, ImageClassifierHead, ImageEncoder, ImageEncoderConfig, ResidualBlock,
    StageConfig,
};
pub use text::{
    mlm_logits, mlm_mask, nsp_probability, tokenize, EncodedText, MlmBatch, Pooling, TextEncoder,
    TextEncoderConfig, Vocab,
};
