//! A complete model: the encoders a fusion kind needs plus its fusion head.

use mmfs_core::param::assert_unique_names;
use mmfs_core::{BoolTensor, Ctx, IntTensor, Parameter, Rng, Tensor};

use crate::error::Result;
use crate::fusion::{FusionConfig, FusionKind, FusionModel, FusionOutput};
use crate::image::{ImageEncoder, ImageEncoderConfig};
use crate::text::{TextEncoder, TextEncoderConfig};

#[derive(Debug)]
pub struct SentimentModel {
    pub kind: FusionKind,
    pub text: Option<TextEncoder>,
    pub image: Option<ImageEncoder>,
    pub fusion: FusionModel,
}

/// One named tensor of a serialized model (parameters and batch-norm
/// running statistics).
pub type StateEntry = (String, Vec<usize>, Vec<f64>);

impl SentimentModel {
    /// Builds the encoders this kind consumes and its fusion head, drawing
    /// every initial weight from `seed` in a fixed order.
    pub fn new(
        kind: FusionKind,
        text_config: &TextEncoderConfig,
        image_config: &ImageEncoderConfig,
        fusion_config: &FusionConfig,
        seed: u64,
    ) -> SentimentModel {
        let mut rng = Rng::new(seed);
        let text = kind
            .uses_text()
            .then(|| TextEncoder::new(text_config.clone(), &mut rng));
        let image = kind
            .uses_image()
            .then(|| ImageEncoder::new(image_config.clone(), &mut rng));
        let fusion = FusionModel::new(
            kind,
            text_config.embed_dim,
            image_config.feature_dim(),
            fusion_config.clone(),
            &mut rng,
        );
        let model = SentimentModel {
            kind,
            text,
            image,
            fusion,
        };
        assert_unique_names(&model.all_parameters());
        model
    }

    /// Full forward pass over a raw batch. Only the modalities the kind uses
    /// are encoded. With `freeze_encoders` the encoders run detached in
    /// inference mode, so only the fusion head sees gradients.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        ids: &IntTensor,
        mask: &BoolTensor,
        images: &Tensor,
        freeze_encoders: bool,
    ) -> Result<FusionOutput> {
        let mut frozen = Ctx::inference();
        let enc_text = match &self.text {
            Some(encoder) => {
                let ctx = if freeze_encoders { &mut frozen } else { &mut *ctx };
                Some(encoder.encode(ctx, ids, mask)?)
            }
            None => None,
        };
        let enc_image = match &self.image {
            Some(encoder) => {
                let ctx = if freeze_encoders { &mut frozen } else { &mut *ctx };
                Some(encoder.encode(ctx, images)?)
            }
            None => None,
        };
        self.fusion.forward(ctx, enc_text.as_ref(), enc_image.as_ref())
    }

    /// Parameters updated by fusion training (pretraining heads excluded).
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        if let Some(t) = &self.text {
            out.extend(t.parameters());
        }
        if let Some(i) = &self.image {
            out.extend(i.parameters());
        }
        out.extend(self.fusion.parameters());
        out
    }

    /// Every parameter including the text pretraining heads.
    pub fn all_parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        if let Some(t) = &self.text {
            out.extend(t.pretrain_parameters());
        }
        if let Some(i) = &self.image {
            out.extend(i.parameters());
        }
        out.extend(self.fusion.parameters());
        out
    }

    /// The set the optimizer updates under the freeze flag.
    pub fn trainable_parameters(&self, freeze_encoders: bool) -> Vec<Parameter> {
        if freeze_encoders {
            self.fusion.parameters()
        } else {
            self.parameters()
        }
    }

    /// Named tensors in a deterministic order: all parameters, then the
    /// batch-norm running statistics.
    pub fn state_dict(&self) -> Vec<StateEntry> {
        let mut out: Vec<StateEntry> = self
            .all_parameters()
            .iter()
            .map(|p| (p.name(), p.shape(), p.value().data().to_vec()))
            .collect();
        if let Some(image) = &self.image {
            for (prefix, bn) in image.batch_norms() {
                let mean = bn.running_mean.borrow().clone();
                let var = bn.running_var.borrow().clone();
                out.push((format!("{prefix}.running_mean"), vec![mean.len()], mean));
                out.push((format!("{prefix}.running_var"), vec![var.len()], var));
            }
        }
        out
    }

    /// Restores values produced by [`Self::state_dict`] into a model of the
    /// same architecture. Order, names, and shapes must all match.
    pub fn load_state_dict(&self, entries: &[StateEntry]) -> std::result::Result<(), String> {
        let expected = self.state_dict();
        if entries.len() != expected.len() {
            return Err(format!(
                "state dict has {} tensors, model needs {}",
                entries.len(),
                expected.len()
            ));
        }
        let params = self.all_parameters();
        for (i, p) in params.iter().enumerate() {
            let (name, shape, data) = &entries[i];
            if *name != p.name() {
                return Err(format!("tensor {i}: expected {:?}, found {name:?}", p.name()));
            }
            if *shape != p.shape() {
                return Err(format!(
                    "tensor {name:?}: shape {shape:?} does not match {:?}",
                    p.shape()
                ));
            }
            p.set_value(Tensor::from_vec(shape.clone(), data.clone()));
        }
        if let Some(image) = &self.image {
            let mut idx = params.len();
            for (prefix, bn) in image.batch_norms() {
                for (suffix, slot) in [
                    ("running_mean", &bn.running_mean),
                    ("running_var", &bn.running_var),
                ] {
                    let (name, _, data) = &entries[idx];
                    let want = format!("{prefix}.{suffix}");
                    if *name != want {
                        return Err(format!("tensor {idx}: expected {want:?}, found {name:?}"));
                    }
                    if data.len() != slot.borrow().len() {
                        return Err(format!("tensor {name:?}: wrong length"));
                    }
                    *slot.borrow_mut() = data.clone();
                    idx += 1;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionConfig;

    fn tiny_bundle(kind: FusionKind, seed: u64) -> SentimentModel {
        let text_cfg = TextEncoderConfig {
            vocab_size: 16,
            embed_dim: 8,
            num_heads: 2,
            num_layers: 1,
            max_seq_len: 6,
            dropout: 0.0,
            pooling: crate::text::Pooling::Cls,
        };
        let image_cfg = ImageEncoderConfig {
            in_channels: 3,
            in_height: 8,
            in_width: 8,
            stem_channels: 4,
            stem_stride: 1,
            stages: vec![crate::image::StageConfig { blocks: 1, channels: 8, stride: 2 }],
            block: crate::image::BlockKind::Basic,
        };
        let fusion_cfg = FusionConfig {
            d_model: 8,
            num_heads: 2,
            num_classes: 3,
            dropout: 0.0,
            ote_literal_concat: false,
        };
        SentimentModel::new(kind, &text_cfg, &image_cfg, &fusion_cfg, seed)
    }

    fn tiny_batch() -> (IntTensor, BoolTensor, Tensor) {
        let ids = IntTensor::from_vec(vec![2, 6], vec![2, 5, 6, 0, 0, 0, 2, 7, 0, 0, 0, 0]);
        let mask = BoolTensor::from_vec(
            vec![2, 6],
            vec![true, true, true, false, false, false, true, true, false, false, false, false],
        );
        let images = Tensor::randn(vec![2, 3, 8, 8], 0.0, 1.0, &mut Rng::new(99));
        (ids, mask, images)
    }

    #[test]
    fn unimodal_bundles_skip_the_unused_encoder() {
        let text_only = tiny_bundle(FusionKind::TextOnly, 0);
        assert!(text_only.text.is_some());
        assert!(text_only.image.is_none());
        let image_only = tiny_bundle(FusionKind::ImageOnly, 0);
        assert!(image_only.text.is_none());
        assert!(image_only.image.is_some());
    }

    #[test]
    fn forward_works_for_every_kind() {
        let (ids, mask, images) = tiny_batch();
        for (i, kind) in FusionKind::ALL.iter().enumerate() {
            let bundle = tiny_bundle(*kind, i as u64);
            let out = bundle
                .forward(&mut Ctx::inference(), &ids, &mask, &images, false)
                .unwrap();
            assert_eq!(out.p.shape(), &[2, 3]);
        }
    }

    #[test]
    fn frozen_encoders_receive_no_gradient() {
        let (ids, mask, images) = tiny_batch();
        let bundle = tiny_bundle(FusionKind::NativeCat, 1);
        let tape = mmfs_core::GradTape::new();
        let mut rng = Rng::new(2);
        let mut ctx = Ctx::train(&tape, &mut rng);
        let out = bundle.forward(&mut ctx, &ids, &mask, &images, true).unwrap();
        let loss = mmfs_core::ops::cross_entropy_loss(&out.logits, &[0, 1]).unwrap();
        tape.backward(&loss).unwrap();
        for p in bundle.text.as_ref().unwrap().parameters() {
            assert!(p.grad().is_none(), "{} got a gradient", p.name());
        }
        for p in bundle.fusion.parameters() {
            assert!(p.grad().is_some(), "{} missing gradient", p.name());
        }
        assert_eq!(
            bundle.trainable_parameters(true).len(),
            bundle.fusion.parameters().len()
        );
    }

    #[test]
    fn state_dict_roundtrip_reproduces_outputs() {
        let (ids, mask, images) = tiny_batch();
        let bundle = tiny_bundle(FusionKind::Cmac, 3);
        let out1 = bundle
            .forward(&mut Ctx::inference(), &ids, &mask, &images, false)
            .unwrap();
        let state = bundle.state_dict();

        let fresh = tiny_bundle(FusionKind::Cmac, 999);
        fresh.load_state_dict(&state).unwrap();
        let out2 = fresh
            .forward(&mut Ctx::inference(), &ids, &mask, &images, false)
            .unwrap();
        assert_eq!(out1.p.data(), out2.p.data());
    }

    #[test]
    fn load_rejects_wrong_count_and_shape() {
        let bundle = tiny_bundle(FusionKind::TextOnly, 4);
        let mut state = bundle.state_dict();
        state.pop();
        assert!(bundle.load_state_dict(&state).is_err());

        let mut state = bundle.state_dict();
        state[0].1 = vec![1, 1];
        state[0].2 = vec![0.0];
        let err = bundle.load_state_dict(&state).unwrap_err();
        assert!(err.contains("shape"), "{err}");
    }
}
