//! Encoder- and fusion-level entries for the gradient-check registry.
//!
//! Every case builds a small fixed-seed model, computes a scalar loss that
//! reaches all of its parameters, and spot-checks analytic parameter
//! gradients against central finite differences.

use mmfs_core::gradcheck::{grad_check_params, CheckCase, CheckScope, DEFAULT_EPS};
use mmfs_core::ops;
use mmfs_core::{BoolTensor, Ctx, IntTensor, Rng, Tensor};

use crate::bundle::SentimentModel;
use crate::fusion::{FusionConfig, FusionKind, FusionModel};
use crate::image::{BlockKind, EncodedImage, ImageEncoder, ImageEncoderConfig, StageConfig};
use crate::text::{mlm_logits, nsp_probability, EncodedText, Pooling, TextEncoder, TextEncoderConfig};

const COORDS_PER_PARAM: usize = 10;
const MODEL_TOLERANCE: f64 = 1e-4;

fn wsum(x: &Tensor, seed: u64) -> mmfs_core::Result<Tensor> {
    let w = Tensor::randn(x.shape().to_vec(), 0.0, 1.0, &mut Rng::new(seed));
    x.mul(&w)?.sum_all()
}

fn small_text_config() -> TextEncoderConfig {
    TextEncoderConfig {
        vocab_size: 24,
        embed_dim: 16,
        num_heads: 2,
        num_layers: 2,
        max_seq_len: 8,
        dropout: 0.0,
        pooling: Pooling::Cls,
    }
}

fn small_image_config() -> ImageEncoderConfig {
    ImageEncoderConfig {
        in_channels: 3,
        in_height: 8,
        in_width: 8,
        stem_channels: 4,
        stem_stride: 1,
        stages: vec![
            StageConfig { blocks: 1, channels: 4, stride: 1 },
            StageConfig { blocks: 1, channels: 8, stride: 2 },
        ],
        block: BlockKind::Basic,
    }
}

fn text_batch() -> (IntTensor, BoolTensor) {
    let ids = IntTensor::from_vec(
        vec![2, 6],
        vec![2, 7, 9, 11, 0, 0, 2, 13, 15, 0, 0, 0],
    );
    let mask = BoolTensor::from_vec(
        vec![2, 6],
        vec![true, true, true, true, false, false, true, true, true, false, false, false],
    );
    (ids, mask)
}

/// Text encoder: the loss reads the hidden states, the pooled feature, MLM
/// logits at two positions, and an NSP probability, so every parameter
/// including both pretraining heads is on the gradient path.
fn text_encoder_case() -> CheckCase {
    CheckCase {
        name: "text_encoder".into(),
        scope: CheckScope::Encoders,
        kind: None,
        tolerance: MODEL_TOLERANCE,
        run: Box::new(|| {
            let encoder = TextEncoder::new(small_text_config(), &mut Rng::new(21));
            let (ids, mask) = text_batch();
            let params = encoder.pretrain_parameters();
            let mut coord_rng = Rng::new(22);
            grad_check_params(
                &mut |tape| {
                    let mut ctx = Ctx {
                        tape,
                        training: false,
                        rng: None,
                    };
                    let out = encoder.encode(&mut ctx, &ids, &mask).map_err(unwrap_model_err)?;
                    let mlm = mlm_logits(&out.hidden, &[(0, 1), (1, 2)], &encoder, &ctx)
                        .map_err(unwrap_model_err)?;
                    let nsp = nsp_probability(&out.pooled, &out.pooled, &encoder, &ctx)
                        .map_err(unwrap_model_err)?;
                    wsum(&out.hidden, 23)?
                        .add(&wsum(&out.pooled, 24)?)?
                        .add(&wsum(&mlm, 25)?)?
                        .add(&wsum(&nsp, 26)?)?
                        .sum_all()
                },
                &params,
                COORDS_PER_PARAM,
                DEFAULT_EPS,
                &mut coord_rng,
            )
        }),
    }
}

/// Image encoder in training mode (batch statistics active).
fn image_encoder_case() -> CheckCase {
    CheckCase {
        name: "image_encoder".into(),
        scope: CheckScope::Encoders,
        kind: None,
        tolerance: MODEL_TOLERANCE,
        run: Box::new(|| {
            let encoder = ImageEncoder::new(small_image_config(), &mut Rng::new(31));
            let images = Tensor::randn(vec![2, 3, 8, 8], 0.0, 1.0, &mut Rng::new(32));
            let params = encoder.parameters();
            let mut coord_rng = Rng::new(33);
            grad_check_params(
                &mut |tape| {
                    let mut ctx = Ctx {
                        tape,
                        training: true,
                        rng: None,
                    };
                    let out = encoder.encode(&mut ctx, &images).map_err(unwrap_model_err)?;
                    wsum(&out.hidden, 34)?.add(&wsum(&out.pooled, 35)?)?.sum_all()
                },
                &params,
                COORDS_PER_PARAM,
                DEFAULT_EPS,
                &mut coord_rng,
            )
        }),
    }
}

fn unwrap_model_err(e: crate::error::ModelError) -> mmfs_core::TensorError {
    match e {
        crate::error::ModelError::Tensor(t) => t,
        other => panic!("unexpected model error during gradcheck: {other}"),
    }
}

fn random_text_encoding(b: usize, s: usize, d: usize, seed: u64) -> EncodedText {
    let mut rng = Rng::new(seed);
    let mut mask = vec![true; b * s];
    // Make the mask ragged so key masking is actually exercised.
    for bi in 0..b {
        for si in (2 + bi.min(s - 1))..s {
            mask[bi * s + si] = false;
        }
    }
    EncodedText {
        hidden: Tensor::randn(vec![b, s, d], 0.0, 1.0, &mut rng),
        pooled: Tensor::randn(vec![b, d], 0.0, 1.0, &mut rng),
        mask: BoolTensor::from_vec(vec![b, s], mask),
    }
}

fn random_image_encoding(b: usize, s: usize, d: usize, seed: u64) -> EncodedImage {
    let mut rng = Rng::new(seed);
    EncodedImage {
        hidden: Tensor::randn(vec![b, s, d], 0.0, 1.0, &mut rng),
        pooled: Tensor::randn(vec![b, d], 0.0, 1.0, &mut rng),
    }
}

/// One fusion head over fixed random encodings, trained against
/// cross-entropy on the fused logits.
fn fusion_case(kind: FusionKind, seed: u64) -> CheckCase {
    CheckCase {
        name: format!("fusion_{}", kind.table_name()),
        scope: CheckScope::Fusion,
        kind: None,
        tolerance: MODEL_TOLERANCE,
        run: Box::new(move || {
            let config = FusionConfig {
                d_model: 8,
                num_heads: 2,
                num_classes: 3,
                dropout: 0.0,
                ote_literal_concat: false,
            };
            let model = FusionModel::new(kind, 6, 10, config, &mut Rng::new(seed));
            let text = random_text_encoding(2, 4, 6, seed + 1);
            let image = random_image_encoding(2, 3, 10, seed + 2);
            let labels = [2usize, 0];
            let params = model.parameters();
            let mut coord_rng = Rng::new(seed + 3);
            grad_check_params(
                &mut |tape| {
                    let mut ctx = Ctx {
                        tape,
                        training: false,
                        rng: None,
                    };
                    let out = model
                        .forward(&mut ctx, Some(&text), Some(&image))
                        .map_err(unwrap_model_err)?;
                    ops::cross_entropy_loss(&out.logits, &labels)
                },
                &params,
                COORDS_PER_PARAM,
                DEFAULT_EPS,
                &mut coord_rng,
            )
        }),
    }
}

/// Full end-to-end pass: tiny encoders feeding the cross-modal-attention
/// head, cross-entropy on the fused logits, every parameter spot-checked.
fn end_to_end_cmac_case() -> CheckCase {
    CheckCase {
        name: "cmac_end_to_end".into(),
        scope: CheckScope::Fusion,
        kind: None,
        tolerance: MODEL_TOLERANCE,
        run: Box::new(|| {
            let fusion_cfg = FusionConfig {
                d_model: 8,
                num_heads: 2,
                num_classes: 3,
                dropout: 0.0,
                ote_literal_concat: false,
            };
            let bundle = SentimentModel::new(
                FusionKind::Cmac,
                &small_text_config(),
                &small_image_config(),
                &fusion_cfg,
                41,
            );
            let (ids, mask) = text_batch();
            let images = Tensor::randn(vec![2, 3, 8, 8], 0.0, 1.0, &mut Rng::new(42));
            let labels = [1usize, 2];
            let params = bundle.parameters();
            let mut coord_rng = Rng::new(43);
            grad_check_params(
                &mut |tape| {
                    let mut ctx = Ctx {
                        tape,
                        training: true,
                        rng: None,
                    };
                    let out = bundle
                        .forward(&mut ctx, &ids, &mask, &images, false)
                        .map_err(unwrap_model_err)?;
                    ops::cross_entropy_loss(&out.logits, &labels)
                },
                &params,
                COORDS_PER_PARAM,
                DEFAULT_EPS,
                &mut coord_rng,
            )
        }),
    }
}

/// The complete registry: primitive ops, both encoders, all fusion heads.
pub fn registry() -> Vec<CheckCase> {
    let mut cases = mmfs_core::gradcheck::op_cases();
    cases.push(text_encoder_case());
    cases.push(image_encoder_case());
    for (i, kind) in FusionKind::ALL.iter().enumerate() {
        cases.push(fusion_case(*kind, 50 + 10 * i as u64));
    }
    cases.push(end_to_end_cmac_case());
    cases
}

/// The registry filtered to one scope.
pub fn registry_for(scope: CheckScope) -> Vec<CheckCase> {
    registry().into_iter().filter(|c| c.scope == scope).collect()
}
