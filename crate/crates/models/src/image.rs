//! Miniature residual-network image encoder.
//!
//! A stem convolution followed by stages of residual blocks. The final
//! feature map serves double duty: flattened over spatial positions it is
//! the hidden-state sequence fed to cross-modal attention, and globally
//! average-pooled it is the pooled feature vector.

use mmfs_core::nn::{BatchNorm2d, Conv2d, Linear};
use serde::{Deserialize, Serialize};
use mmfs_core::{Ctx, Parameter, Rng, Tensor, TensorError};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Two 3x3 convolutions (the desk-scale default).
    Basic,
    /// 1x1 reduce, 3x3, 1x1 expand; the deeper variant used at larger scale.
    Bottleneck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEncoderConfig {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageConfig>,
    pub block: BlockKind,
}

impl ImageEncoderConfig {
    /// Sized for minutes-scale runs: 16x16 inputs, three basic stages.
    pub fn desk() -> ImageEncoderConfig {
        ImageEncoderConfig {
            in_channels: 3,
            in_height: 16,
            in_width: 16,
            stem_channels: 16,
            stem_stride: 1,
            stages: vec![
                StageConfig { blocks: 1, channels: 16, stride: 1 },
                StageConfig { blocks: 1, channels: 32, stride: 2 },
                StageConfig { blocks: 1, channels: 64, stride: 2 },
            ],
            block: BlockKind::Basic,
        }
    }

    /// Bottleneck stage layout mirroring the 50-layer reference network:
    /// 224x224 inputs ending in a 7x7x2048 map.
    pub fn paper() -> ImageEncoderConfig {
        ImageEncoderConfig {
            in_channels: 3,
            in_height: 224,
            in_width: 224,
            stem_channels: 64,
            stem_stride: 2,
            stages: vec![
                StageConfig { blocks: 3, channels: 256, stride: 2 },
                StageConfig { blocks: 4, channels: 512, stride: 2 },
                StageConfig { blocks: 6, channels: 1024, stride: 2 },
                StageConfig { blocks: 3, channels: 2048, stride: 2 },
            ],
            block: BlockKind::Bottleneck,
        }
    }

    pub fn validate(&self) {
        assert!(!self.stages.is_empty(), "need at least one stage");
        for s in &self.stages {
            assert!(s.blocks >= 1 && s.channels >= 1);
            assert!(matches!(s.stride, 1 | 2), "stage strides must be 1 or 2");
            if self.block == BlockKind::Bottleneck {
                assert!(s.channels % 4 == 0, "bottleneck channels must divide by 4");
            }
        }
        assert!(matches!(self.stem_stride, 1 | 2));
    }

    /// Output feature width d_I (the final stage's channel count).
    pub fn feature_dim(&self) -> usize {
        self.stages.last().unwrap().channels
    }

    fn conv_out(extent: usize, stride: usize) -> usize {
        // 3x3 kernel, padding 1.
        (extent + 2 - 3) / stride + 1
    }

    /// Spatial extents of the final feature map.
    pub fn out_spatial(&self) -> (usize, usize) {
        let mut h = Self::conv_out(self.in_height, self.stem_stride);
        let mut w = Self::conv_out(self.in_width, self.stem_stride);
        for s in &self.stages {
            h = Self::conv_out(h, s.stride);
            w = Self::conv_out(w, s.stride);
        }
        (h, w)
    }

    /// Sequence length of the flattened feature map.
    pub fn num_positions(&self) -> usize {
        let (h, w) = self.out_spatial();
        h * w
    }
}

/// Projection shortcut used when a block changes shape.
#[derive(Debug)]
struct Downsample {
    conv: Conv2d,
    bn: BatchNorm2d,
}

#[derive(Debug)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<Downsample>,
}

#[derive(Debug)]
pub struct BottleneckBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<Downsample>,
}

/// One residual unit: out = relu(F(x) + shortcut(x)).
#[derive(Debug)]
pub enum ResidualBlock {
    Basic(BasicBlock),
    Bottleneck(BottleneckBlock),
}

fn make_downsample(name: &str, c_in: usize, c_out: usize, stride: usize, rng: &mut Rng) -> Option<Downsample> {
    if stride == 1 && c_in == c_out {
        return None;
    }
    Some(Downsample {
        conv: Conv2d::new(&format!("{name}.down"), c_in, c_out, 1, stride, 0, rng),
        bn: BatchNorm2d::new(&format!("{name}.down.bn"), c_out),
    })
}

impl ResidualBlock {
    pub fn new(
        kind: BlockKind,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> ResidualBlock {
        match kind {
            BlockKind::Basic => ResidualBlock::Basic(BasicBlock {
                conv1: Conv2d::new(&format!("{name}.conv1"), c_in, c_out, 3, stride, 1, rng),
                bn1: BatchNorm2d::new(&format!("{name}.bn1"), c_out),
                conv2: Conv2d::new(&format!("{name}.conv2"), c_out, c_out, 3, 1, 1, rng),
                bn2: BatchNorm2d::new(&format!("{name}.bn2"), c_out),
                downsample: make_downsample(name, c_in, c_out, stride, rng),
            }),
            BlockKind::Bottleneck => {
                let mid = c_out / 4;
                ResidualBlock::Bottleneck(BottleneckBlock {
                    conv1: Conv2d::new(&format!("{name}.conv1"), c_in, mid, 1, 1, 0, rng),
                    bn1: BatchNorm2d::new(&format!("{name}.bn1"), mid),
                    conv2: Conv2d::new(&format!("{name}.conv2"), mid, mid, 3, stride, 1, rng),
                    bn2: BatchNorm2d::new(&format!("{name}.bn2"), mid),
                    conv3: Conv2d::new(&format!("{name}.conv3"), mid, c_out, 1, 1, 0, rng),
                    bn3: BatchNorm2d::new(&format!("{name}.bn3"), c_out),
                    downsample: make_downsample(name, c_in, c_out, stride, rng),
                })
            }
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        let shortcut = |ds: &Option<Downsample>, ctx: &Ctx, x: &Tensor| -> Result<Tensor> {
            match ds {
                Some(d) => Ok(d.bn.forward(ctx, &d.conv.forward(ctx.tape, x)?)?),
                None => Ok(x.clone()),
            }
        };
        let out = match self {
            ResidualBlock::Basic(b) => {
                let f = b.bn1.forward(ctx, &b.conv1.forward(ctx.tape, x)?)?.relu()?;
                let f = b.bn2.forward(ctx, &b.conv2.forward(ctx.tape, &f)?)?;
                f.add(&shortcut(&b.downsample, ctx, x)?)?
            }
            ResidualBlock::Bottleneck(b) => {
                let f = b.bn1.forward(ctx, &b.conv1.forward(ctx.tape, x)?)?.relu()?;
                let f = b.bn2.forward(ctx, &b.conv2.forward(ctx.tape, &f)?)?.relu()?;
                let f = b.bn3.forward(ctx, &b.conv3.forward(ctx.tape, &f)?)?;
                f.add(&shortcut(&b.downsample, ctx, x)?)?
            }
        };
        out.relu().map_err(Into::into)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        let push_ds = |ds: &Option<Downsample>, out: &mut Vec<Parameter>| {
            if let Some(d) = ds {
                out.extend(d.conv.parameters());
                out.extend(d.bn.parameters());
            }
        };
        match self {
            ResidualBlock::Basic(b) => {
                out.extend(b.conv1.parameters());
                out.extend(b.bn1.parameters());
                out.extend(b.conv2.parameters());
                out.extend(b.bn2.parameters());
                push_ds(&b.downsample, &mut out);
            }
            ResidualBlock::Bottleneck(b) => {
                out.extend(b.conv1.parameters());
                out.extend(b.bn1.parameters());
                out.extend(b.conv2.parameters());
                out.extend(b.bn2.parameters());
                out.extend(b.conv3.parameters());
                out.extend(b.bn3.parameters());
                push_ds(&b.downsample, &mut out);
            }
        }
        out
    }

    pub(crate) fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        match self {
            ResidualBlock::Basic(b) => {
                let mut v = vec![&b.bn1, &b.bn2];
                if let Some(d) = &b.downsample {
                    v.push(&d.bn);
                }
                v
            }
            ResidualBlock::Bottleneck(b) => {
                let mut v = vec![&b.bn1, &b.bn2, &b.bn3];
                if let Some(d) = &b.downsample {
                    v.push(&d.bn);
                }
                v
            }
        }
    }

    pub fn has_downsample(&self) -> bool {
        match self {
            ResidualBlock::Basic(b) => b.downsample.is_some(),
            ResidualBlock::Bottleneck(b) => b.downsample.is_some(),
        }
    }

    /// Zeroes the affine of the residual branch's final batch norm, so the
    /// branch outputs exactly zero and the block reduces to relu(shortcut).
    pub fn zero_residual_output(&self) {
        match self {
            ResidualBlock::Basic(b) => b.bn2.zero_out(),
            ResidualBlock::Bottleneck(b) => b.bn3.zero_out(),
        }
    }
}

/// Hidden-state sequence and pooled feature for a batch of images.
#[derive(Debug, Clone)]
pub struct EncodedImage {
    /// [B, S_I, d_I]: final feature map flattened over spatial positions.
    pub hidden: Tensor,
    /// [B, d_I]: global average pool of the final map.
    pub pooled: Tensor,
}

#[derive(Debug)]
pub struct ImageEncoder {
    pub config: ImageEncoderConfig,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<Vec<ResidualBlock>>,
}

impl ImageEncoder {
    pub fn new(config: ImageEncoderConfig, rng: &mut Rng) -> ImageEncoder {
        config.validate();
        let stem_conv = Conv2d::new(
            "image.stem",
            config.in_channels,
            config.stem_channels,
            3,
            config.stem_stride,
            1,
            rng,
        );
        let stem_bn = BatchNorm2d::new("image.stem.bn", config.stem_channels);
        let mut stages = Vec::new();
        let mut c_in = config.stem_channels;
        for (si, stage) in config.stages.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..stage.blocks {
                let stride = if bi == 0 { stage.stride } else { 1 };
                blocks.push(ResidualBlock::new(
                    config.block,
                    &format!("image.stage{si}.block{bi}"),
                    c_in,
                    stage.channels,
                    stride,
                    rng,
                ));
                c_in = stage.channels;
            }
            stages.push(blocks);
        }
        ImageEncoder {
            config,
            stem_conv,
            stem_bn,
            stages,
        }
    }

    /// Stem, stages, then flatten: hidden [B, H'*W', d_I] and its mean over
    /// positions as the pooled feature.
    pub fn encode(&self, ctx: &mut Ctx, images: &Tensor) -> Result<EncodedImage> {
        let c = self.config.in_channels;
        let (h, w) = (self.config.in_height, self.config.in_width);
        if images.rank() != 4 || images.shape()[1] != c || images.shape()[2] != h || images.shape()[3] != w
        {
            return Err(TensorError::ShapeMismatch {
                op: "encode_image",
                lhs: images.shape().to_vec(),
                rhs: vec![0, c, h, w],
            }
            .into());
        }
        let b = images.shape()[0];
        let mut x = self
            .stem_bn
            .forward(ctx, &self.stem_conv.forward(ctx.tape, images)?)?
            .relu()?;
        for stage in &self.stages {
            for block in stage {
                x = block.forward(ctx, &x)?;
            }
        }
        let d = self.config.feature_dim();
        let positions = x.numel() / (b * d);
        // [B, d, H', W'] -> [B, S_I, d]
        let hidden = x.reshape(vec![b, d, positions])?.permute(&[0, 2, 1])?;
        let pooled = hidden.mean_reduce(1, true)?;
        Ok(EncodedImage { hidden, pooled })
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        out.extend(self.stem_conv.parameters());
        out.extend(self.stem_bn.parameters());
        for stage in &self.stages {
            for block in stage {
                out.extend(block.parameters());
            }
        }
        out
    }

    /// All batch-norm layers with their name prefixes, for checkpointing the
    /// running statistics.
    pub fn batch_norms(&self) -> Vec<(String, &BatchNorm2d)> {
        let mut out: Vec<(String, &BatchNorm2d)> = vec![("image.stem.bn".into(), &self.stem_bn)];
        for stage in &self.stages {
            for block in stage {
                for bn in block.batch_norms() {
                    // Derive the prefix from the gamma parameter's name.
                    let name = bn.gamma.name();
                    let prefix = name.strip_suffix(".gamma").unwrap_or(&name).to_string();
                    out.push((prefix, bn));
                }
            }
        }
        out
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ResidualBlock> {
        self.stages.iter().flatten()
    }
}

/// The reference classifier head: class probabilities from the pooled image
/// feature, y = softmax(W f + b).
#[derive(Debug)]
pub struct ImageClassifierHead {
    pub linear: Linear,
}

impl ImageClassifierHead {
    pub fn new(d_in: usize, classes: usize, rng: &mut Rng) -> ImageClassifierHead {
        ImageClassifierHead {
            linear: Linear::new("image.head", d_in, classes, rng),
        }
    }

    pub fn forward(&self, ctx: &Ctx, pooled: &Tensor) -> Result<Tensor> {
        let logits = self.linear.forward(ctx.tape, pooled)?;
        logits.softmax(1).map_err(Into::into)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        self.linear.parameters()
    }
}
