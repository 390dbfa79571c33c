//! The fusion zoo: five text+image fusion heads plus the two unimodal
//! baselines, all mapping encoder outputs to class probabilities.
//!
//! Branch classifier outputs are treated as unnormalized logits; fusion sums
//! them and applies one softmax, so `p = softmax(p_T + p_I)` is meaningful
//! rather than a softmax of softmaxes.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use mmfs_core::nn::{AttentionParams, EncoderLayer, Linear};
use mmfs_core::ops;
use mmfs_core::{BoolTensor, Ctx, Parameter, Rng, Tensor, TensorError};

use crate::error::{ModelError, Result};
use crate::image::EncodedImage;
use crate::text::EncodedText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionKind {
    Cmac,
    Hstec,
    Ote,
    NativeCat,
    NativeCombine,
    TextOnly,
    ImageOnly,
}

impl FusionKind {
    /// The seven comparison rows in report order (unimodal baselines first).
    pub const ALL: [FusionKind; 7] = [
        FusionKind::TextOnly,
        FusionKind::ImageOnly,
        FusionKind::Cmac,
        FusionKind::Hstec,
        FusionKind::Ote,
        FusionKind::NativeCat,
        FusionKind::NativeCombine,
    ];

    pub const MULTIMODAL: [FusionKind; 5] = [
        FusionKind::Cmac,
        FusionKind::Hstec,
        FusionKind::Ote,
        FusionKind::NativeCat,
        FusionKind::NativeCombine,
    ];

    /// Row label used in reports.
    pub fn table_name(&self) -> &'static str {
        match self {
            FusionKind::TextOnly => "Bert",
            FusionKind::ImageOnly => "ResNet",
            FusionKind::Cmac => "CMACModel",
            FusionKind::Hstec => "HSTECModel",
            FusionKind::Ote => "OTEModel",
            FusionKind::NativeCat => "NativeCatModel",
            FusionKind::NativeCombine => "NativeCombineModel",
        }
    }

    pub fn uses_text(&self) -> bool {
        !matches!(self, FusionKind::ImageOnly)
    }

    pub fn uses_image(&self) -> bool {
        !matches!(self, FusionKind::TextOnly)
    }

    pub fn is_multimodal(&self) -> bool {
        self.uses_text() && self.uses_image()
    }

    pub fn valid_names() -> String {
        FusionKind::ALL
            .iter()
            .map(|k| k.table_name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<FusionKind, String> {
        match s.to_ascii_lowercase().as_str() {
            "bert" | "textonly" | "text" => Ok(FusionKind::TextOnly),
            "resnet" | "imageonly" | "image" => Ok(FusionKind::ImageOnly),
            "cmac" | "cmacmodel" => Ok(FusionKind::Cmac),
            "hstec" | "hstecmodel" => Ok(FusionKind::Hstec),
            "ote" | "otemodel" => Ok(FusionKind::Ote),
            "nativecat" | "nativecatmodel" => Ok(FusionKind::NativeCat),
            "nativecombine" | "nativecombinemodel" => Ok(FusionKind::NativeCombine),
            other => Err(format!(
                "unknown model kind {other:?}; valid kinds: {}",
                FusionKind::valid_names()
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_classes: usize,
    pub dropout: f64,
    /// Read the pooled-feature concatenation literally as one 2d-wide token
    /// instead of a two-token sequence (comparison switch for OTE).
    pub ote_literal_concat: bool,
}

impl FusionConfig {
    pub fn desk() -> FusionConfig {
        FusionConfig {
            d_model: 64,
            num_heads: 4,
            num_classes: 3,
            dropout: 0.1,
            ote_literal_concat: false,
        }
    }

    pub fn paper() -> FusionConfig {
        FusionConfig {
            d_model: 768,
            num_heads: 12,
            num_classes: 3,
            dropout: 0.1,
            ote_literal_concat: false,
        }
    }

    pub fn validate(&self) {
        assert!(self.num_classes >= 2, "need at least two classes");
        assert!(
            self.d_model % self.num_heads == 0,
            "d_model {} not divisible by {} heads",
            self.d_model,
            self.num_heads
        );
    }
}

/// Two-layer MLP classifier: linear -> relu -> dropout -> linear.
#[derive(Debug)]
pub struct Classifier {
    pub l1: Linear,
    pub l2: Linear,
    pub dropout: f64,
}

impl Classifier {
    fn new(name: &str, d_in: usize, hidden: usize, classes: usize, dropout: f64, rng: &mut Rng) -> Classifier {
        Classifier {
            l1: Linear::new(&format!("{name}.l1"), d_in, hidden, rng),
            l2: Linear::new(&format!("{name}.l2"), hidden, classes, rng),
            dropout,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        let h = self.l1.forward(ctx.tape, x)?.relu()?;
        let h = if ctx.training && self.dropout > 0.0 {
            ops::dropout(&h, self.dropout, true, ctx.rng())?
        } else {
            h
        };
        self.l2.forward(ctx.tape, &h).map_err(Into::into)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = self.l1.parameters();
        out.extend(self.l2.parameters());
        out
    }

    /// Zeroes the output layer so every input maps to the zero logit vector.
    pub fn zero_output(&self) {
        self.l2.zero_out();
    }
}

/// Prediction of one fusion forward pass.
#[derive(Debug)]
pub struct FusionOutput {
    /// Pre-softmax fused class scores [B,K]; the training loss reads these.
    pub logits: Tensor,
    /// softmax(logits): rows sum to one.
    pub p: Tensor,
    /// Text-branch logits, for the two-branch fusions.
    pub text_logits: Option<Tensor>,
    /// Image-branch logits, for the two-branch fusions.
    pub image_logits: Option<Tensor>,
    /// argmax(p) per row, ties broken toward the lowest class index.
    pub labels: Vec<usize>,
    /// Attention weight tensors for inspection, when the kind has any.
    pub attn: Vec<Tensor>,
}

/// softmax(p_T + p_I) along the class axis.
pub fn fuse_probabilities(text_logits: &Tensor, image_logits: &Tensor) -> Result<Tensor> {
    if text_logits.shape() != image_logits.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_probabilities",
            lhs: text_logits.shape().to_vec(),
            rhs: image_logits.shape().to_vec(),
        }
        .into());
    }
    text_logits.add(image_logits)?.softmax(1).map_err(Into::into)
}

/// Row-wise argmax with lowest-index tie breaking.
pub fn predict_label(p: &Tensor) -> Result<Vec<usize>> {
    if p.rank() != 2 || p.shape()[1] == 0 {
        return Err(TensorError::EmptyClassAxis.into());
    }
    let (b, k) = (p.shape()[0], p.shape()[1]);
    let mut out = Vec::with_capacity(b);
    for r in 0..b {
        let row = &p.data()[r * k..(r + 1) * k];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// One fusion head. Only the parameters its kind needs exist.
#[derive(Debug)]
pub struct FusionModel {
    pub kind: FusionKind,
    pub config: FusionConfig,
    pub proj_hidden_text: Option<Linear>,
    pub proj_pooled_text: Option<Linear>,
    pub proj_hidden_image: Option<Linear>,
    pub proj_pooled_image: Option<Linear>,
    /// CMAC: queries from the image attend over text states.
    pub attn_image_to_text: Option<AttentionParams>,
    /// CMAC: queries from the text attend over image states.
    pub attn_text_to_image: Option<AttentionParams>,
    /// HSTEC and OTE: one self-attention encoder layer over fused sequences.
    pub encoder_layer: Option<EncoderLayer>,
    pub text_classifier: Option<Classifier>,
    pub image_classifier: Option<Classifier>,
    pub classifier: Option<Classifier>,
}

impl FusionModel {
    pub fn new(
        kind: FusionKind,
        d_text: usize,
        d_image: usize,
        config: FusionConfig,
        rng: &mut Rng,
    ) -> FusionModel {
        config.validate();
        let d = config.d_model;
        let k = config.num_classes;
        let drop = config.dropout;
        let mut model = FusionModel {
            kind,
            config: config.clone(),
            proj_hidden_text: None,
            proj_pooled_text: None,
            proj_hidden_image: None,
            proj_pooled_image: None,
            attn_image_to_text: None,
            attn_text_to_image: None,
            encoder_layer: None,
            text_classifier: None,
            image_classifier: None,
            classifier: None,
        };
        let needs_hidden = matches!(kind, FusionKind::Cmac | FusionKind::Hstec);
        if kind.uses_text() {
            model.proj_pooled_text = Some(Linear::new("fusion.proj_ft", d_text, d, rng));
            if needs_hidden {
                model.proj_hidden_text = Some(Linear::new("fusion.proj_ht", d_text, d, rng));
            }
        }
        if kind.uses_image() {
            model.proj_pooled_image = Some(Linear::new("fusion.proj_fi", d_image, d, rng));
            if needs_hidden {
                model.proj_hidden_image = Some(Linear::new("fusion.proj_hi", d_image, d, rng));
            }
        }
        match kind {
            FusionKind::Cmac => {
                model.attn_image_to_text =
                    Some(AttentionParams::new("fusion.attn_i2t", d, config.num_heads, rng));
                model.attn_text_to_image =
                    Some(AttentionParams::new("fusion.attn_t2i", d, config.num_heads, rng));
                model.text_classifier =
                    Some(Classifier::new("fusion.text_cls", 2 * d, d, k, drop, rng));
                model.image_classifier =
                    Some(Classifier::new("fusion.image_cls", 2 * d, d, k, drop, rng));
            }
            FusionKind::Hstec => {
                model.encoder_layer =
                    Some(EncoderLayer::new("fusion.enc", d, config.num_heads, drop, rng));
                model.text_classifier =
                    Some(Classifier::new("fusion.text_cls", 2 * d, d, k, drop, rng));
                model.image_classifier =
                    Some(Classifier::new("fusion.image_cls", 2 * d, d, k, drop, rng));
            }
            FusionKind::Ote => {
                let width = if config.ote_literal_concat { 2 * d } else { d };
                model.encoder_layer = Some(EncoderLayer::new(
                    "fusion.enc",
                    width,
                    config.num_heads,
                    drop,
                    rng,
                ));
                model.classifier = Some(Classifier::new("fusion.cls", width, d, k, drop, rng));
            }
            FusionKind::NativeCat => {
                model.classifier = Some(Classifier::new("fusion.cls", 2 * d, d, k, drop, rng));
            }
            FusionKind::NativeCombine => {
                model.text_classifier =
                    Some(Classifier::new("fusion.text_cls", d, d, k, drop, rng));
                model.image_classifier =
                    Some(Classifier::new("fusion.image_cls", d, d, k, drop, rng));
            }
            FusionKind::TextOnly | FusionKind::ImageOnly => {
                model.classifier = Some(Classifier::new("fusion.cls", d, d, k, drop, rng));
            }
        }
        model
    }

    fn need_text<'a>(&self, text: Option<&'a EncodedText>) -> Result<&'a EncodedText> {
        text.ok_or(ModelError::KindMismatch {
            kind: self.kind,
            missing: "text",
        })
    }

    fn need_image<'a>(&self, image: Option<&'a EncodedImage>) -> Result<&'a EncodedImage> {
        image.ok_or(ModelError::KindMismatch {
            kind: self.kind,
            missing: "image",
        })
    }

    /// Dispatches on the kind. Unimodal kinds ignore (and do not require)
    /// the other modality's encoding.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        text: Option<&EncodedText>,
        image: Option<&EncodedImage>,
    ) -> Result<FusionOutput> {
        match self.kind {
            FusionKind::Cmac => self.cmac_forward(ctx, self.need_text(text)?, self.need_image(image)?),
            FusionKind::Hstec => {
                self.hstec_forward(ctx, self.need_text(text)?, self.need_image(image)?)
            }
            FusionKind::Ote => self.ote_forward(ctx, self.need_text(text)?, self.need_image(image)?),
            FusionKind::NativeCat => {
                self.native_cat_forward(ctx, self.need_text(text)?, self.need_image(image)?)
            }
            FusionKind::NativeCombine => {
                self.native_combine_forward(ctx, self.need_text(text)?, self.need_image(image)?)
            }
            FusionKind::TextOnly => {
                let t = self.need_text(text)?;
                let f = self.proj_pooled_text.as_ref().unwrap().forward(ctx.tape, &t.pooled)?;
                let logits = self.classifier.as_ref().unwrap().forward(ctx, &f)?;
                finish(logits, None, None, vec![])
            }
            FusionKind::ImageOnly => {
                let i = self.need_image(image)?;
                let f = self.proj_pooled_image.as_ref().unwrap().forward(ctx.tape, &i.pooled)?;
                let logits = self.classifier.as_ref().unwrap().forward(ctx, &f)?;
                finish(logits, None, None, vec![])
            }
        }
    }

    /// Bidirectional cross-modal attention: each modality queries the other,
    /// the attended outputs are averaged over the query axis, and each
    /// branch classifies [pooled; attended] before logit-sum fusion.
    fn cmac_forward(
        &self,
        ctx: &mut Ctx,
        text: &EncodedText,
        image: &EncodedImage,
    ) -> Result<FusionOutput> {
        let h_t = self.proj_hidden_text.as_ref().unwrap().forward(ctx.tape, &text.hidden)?;
        let f_t = self.proj_pooled_text.as_ref().unwrap().forward(ctx.tape, &text.pooled)?;
        let h_i = self.proj_hidden_image.as_ref().unwrap().forward(ctx.tape, &image.hidden)?;
        let f_i = self.proj_pooled_image.as_ref().unwrap().forward(ctx.tape, &image.pooled)?;

        // Image queries attend over text states (pad keys masked out).
        let (att_i2t, w_i2t) = self.attn_image_to_text.as_ref().unwrap().forward(
            ctx.tape,
            &h_i,
            &h_t,
            Some(&text.mask),
        )?;
        // Text queries attend over image states (every position is live).
        let (att_t2i, w_t2i) =
            self.attn_text_to_image
                .as_ref()
                .unwrap()
                .forward(ctx.tape, &h_t, &h_i, None)?;

        // Average over the query-sequence axis to one vector per sample.
        let a_i2t = att_i2t.mean_reduce(1, true)?;
        let a_t2i = att_t2i.mean_reduce(1, true)?;

        let text_in = ops::concat(&[&f_t, &a_i2t], 1)?;
        let image_in = ops::concat(&[&f_i, &a_t2i], 1)?;
        let p_t = self.text_classifier.as_ref().unwrap().forward(ctx, &text_in)?;
        let p_i = self.image_classifier.as_ref().unwrap().forward(ctx, &image_in)?;
        let logits = p_t.add(&p_i)?;
        finish(logits, Some(p_t), Some(p_i), vec![w_i2t, w_t2i])
    }

    /// Concatenate the two hidden-state sequences, run one self-attention
    /// encoder layer over the joint sequence, average over positions, and
    /// classify per branch against [pooled; fused].
    fn hstec_forward(
        &self,
        ctx: &mut Ctx,
        text: &EncodedText,
        image: &EncodedImage,
    ) -> Result<FusionOutput> {
        let h_t = self.proj_hidden_text.as_ref().unwrap().forward(ctx.tape, &text.hidden)?;
        let f_t = self.proj_pooled_text.as_ref().unwrap().forward(ctx.tape, &text.pooled)?;
        let h_i = self.proj_hidden_image.as_ref().unwrap().forward(ctx.tape, &image.hidden)?;
        let f_i = self.proj_pooled_image.as_ref().unwrap().forward(ctx.tape, &image.pooled)?;

        let joint = ops::concat(&[&h_t, &h_i], 1)?;
        let (b, s_text) = (text.mask.shape[0], text.mask.shape[1]);
        let s_image = image.hidden.shape()[1];
        let mut mask = Vec::with_capacity(b * (s_text + s_image));
        for bi in 0..b {
            mask.extend_from_slice(&text.mask.data[bi * s_text..(bi + 1) * s_text]);
            mask.extend(std::iter::repeat(true).take(s_image));
        }
        let joint_mask = BoolTensor::from_vec(vec![b, s_text + s_image], mask);

        let (fused, weights) = self.encoder_layer.as_ref().unwrap().forward_with_weights(
            ctx,
            &joint,
            Some(&joint_mask),
        )?;
        let a = fused.mean_reduce(1, true)?;

        let p_t = self
            .text_classifier
            .as_ref()
            .unwrap()
            .forward(ctx, &ops::concat(&[&f_t, &a], 1)?)?;
        let p_i = self
            .image_classifier
            .as_ref()
            .unwrap()
            .forward(ctx, &ops::concat(&[&f_i, &a], 1)?)?;
        let logits = p_t.add(&p_i)?;
        finish(logits, Some(p_t), Some(p_i), vec![weights])
    }

    /// Stack the two pooled features as a two-token sequence (image first),
    /// run the encoder layer, average the tokens, and classify once.
    fn ote_forward(
        &self,
        ctx: &mut Ctx,
        text: &EncodedText,
        image: &EncodedImage,
    ) -> Result<FusionOutput> {
        let f_t = self.proj_pooled_text.as_ref().unwrap().forward(ctx.tape, &text.pooled)?;
        let f_i = self.proj_pooled_image.as_ref().unwrap().forward(ctx.tape, &image.pooled)?;
        let b = f_t.shape()[0];
        let d = self.config.d_model;

        let seq = if self.config.ote_literal_concat {
            // Literal reading: one token of width 2d attending to itself.
            ops::concat(&[&f_i, &f_t], 1)?.reshape(vec![b, 1, 2 * d])?
        } else {
            let tok_i = f_i.reshape(vec![b, 1, d])?;
            let tok_t = f_t.reshape(vec![b, 1, d])?;
            ops::concat(&[&tok_i, &tok_t], 1)?
        };
        let (fused, weights) = self
            .encoder_layer
            .as_ref()
            .unwrap()
            .forward_with_weights(ctx, &seq, None)?;
        let pooled = fused.mean_reduce(1, true)?;
        let logits = self.classifier.as_ref().unwrap().forward(ctx, &pooled)?;
        finish(logits, None, None, vec![weights])
    }

    /// One classifier over the concatenated pooled features.
    fn native_cat_forward(
        &self,
        ctx: &mut Ctx,
        text: &EncodedText,
        image: &EncodedImage,
    ) -> Result<FusionOutput> {
        let f_t = self.proj_pooled_text.as_ref().unwrap().forward(ctx.tape, &text.pooled)?;
        let f_i = self.proj_pooled_image.as_ref().unwrap().forward(ctx.tape, &image.pooled)?;
        let joint = ops::concat(&[&f_t, &f_i], 1)?;
        let logits = self.classifier.as_ref().unwrap().forward(ctx, &joint)?;
        finish(logits, None, None, vec![])
    }

    /// Independent per-modality classifiers fused by logit summation.
    fn native_combine_forward(
        &self,
        ctx: &mut Ctx,
        text: &EncodedText,
        image: &EncodedImage,
    ) -> Result<FusionOutput> {
        let f_t = self.proj_pooled_text.as_ref().unwrap().forward(ctx.tape, &text.pooled)?;
        let f_i = self.proj_pooled_image.as_ref().unwrap().forward(ctx.tape, &image.pooled)?;
        let p_t = self.text_classifier.as_ref().unwrap().forward(ctx, &f_t)?;
        let p_i = self.image_classifier.as_ref().unwrap().forward(ctx, &f_i)?;
        let logits = p_t.add(&p_i)?;
        finish(logits, Some(p_t), Some(p_i), vec![])
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        for proj in [
            &self.proj_hidden_text,
            &self.proj_pooled_text,
            &self.proj_hidden_image,
            &self.proj_pooled_image,
        ]
        .into_iter()
        .flatten()
        {
            out.extend(proj.parameters());
        }
        if let Some(a) = &self.attn_image_to_text {
            out.extend(a.parameters());
        }
        if let Some(a) = &self.attn_text_to_image {
            out.extend(a.parameters());
        }
        if let Some(e) = &self.encoder_layer {
            out.extend(e.parameters());
        }
        for c in [&self.text_classifier, &self.image_classifier, &self.classifier]
            .into_iter()
            .flatten()
        {
            out.extend(c.parameters());
        }
        out
    }

    /// Zeroes every classifier output layer (tests use this to force
    /// uniform predictions).
    pub fn zero_classifier_outputs(&self) {
        for c in [&self.text_classifier, &self.image_classifier, &self.classifier]
            .into_iter()
            .flatten()
        {
            c.zero_output();
        }
    }
}

fn finish(
    logits: Tensor,
    text_logits: Option<Tensor>,
    image_logits: Option<Tensor>,
    attn: Vec<Tensor>,
) -> Result<FusionOutput> {
    let p = logits.softmax(1)?;
    let labels = predict_label(&p)?;
    Ok(FusionOutput {
        logits,
        p,
        text_logits,
        image_logits,
        labels,
        attn,
    })
}
