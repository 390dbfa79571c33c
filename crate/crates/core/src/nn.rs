//! Neural layers composed from the primitive ops: linear maps, norms,
//! convolution, embeddings, multi-head attention, and the transformer
//! encoder layer used by both the text encoder and the fusion heads.

use std::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::ops;
use crate::param::Parameter;
use crate::rng::Rng;
use crate::tape::{Ctx, GradTape};
use crate::tensor::{BoolTensor, IntTensor, Tensor};

/// Fully connected layer: y = x W + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Linear {
        Linear {
            weight: Parameter::xavier(format!("{name}.w"), d_in, d_out, rng),
            bias: Parameter::zeros(format!("{name}.b"), vec![d_out]),
        }
    }

    /// Identity-initialized square layer (used by tests that must preserve
    /// inputs exactly).
    pub fn identity(name: &str, d: usize) -> Linear {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Linear {
            weight: Parameter::new(format!("{name}.w"), Tensor::from_vec(vec![d, d], w)),
            bias: Parameter::zeros(format!("{name}.b"), vec![d]),
        }
    }

    pub fn forward(&self, tape: Option<&GradTape>, x: &Tensor) -> Result<Tensor> {
        let d_in = self.weight.shape()[0];
        if x.shape().last() != Some(&d_in) {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape(),
            });
        }
        let w = self.weight.bind(tape)?;
        let b = self.bias.bind(tape)?;
        // x may be [.., d_in]: flatten the leading axes for one big GEMM.
        let lead: Vec<usize> = x.shape()[..x.rank() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let x2 = x.reshape(vec![rows, d_in])?;
        let y = x2.matmul(&w)?.add(&b)?;
        let mut out_shape = lead;
        out_shape.push(self.weight.shape()[1]);
        y.reshape(out_shape)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    /// Zeroes both weight and bias; used to cut a sublayer out of a residual
    /// path.
    pub fn zero_out(&self) {
        self.weight.set_value(Tensor::zeros(self.weight.shape()));
        self.bias.set_value(Tensor::zeros(self.bias.shape()));
    }
}

/// Last-axis normalization with learned affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gamma: Parameter::ones(format!("{name}.gamma"), vec![d]),
            beta: Parameter::zeros(format!("{name}.beta"), vec![d]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: Option<&GradTape>, x: &Tensor) -> Result<Tensor> {
        let gamma = self.gamma.bind(tape)?;
        let beta = self.beta.bind(tape)?;
        ops::layer_norm(x, &gamma, &beta, self.eps)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        vec![self.gamma.clone(), self.beta.clone()]
    }
}

/// Channel-wise batch normalization with running statistics for inference.
#[derive(Debug)]
pub struct BatchNorm2d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: RefCell<Vec<f64>>,
    pub running_var: RefCell<Vec<f64>>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            gamma: Parameter::ones(format!("{name}.gamma"), vec![channels]),
            beta: Parameter::zeros(format!("{name}.beta"), vec![channels]),
            running_mean: RefCell::new(vec![0.0; channels]),
            running_var: RefCell::new(vec![1.0; channels]),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let gamma = self.gamma.bind(ctx.tape)?;
        let beta = self.beta.bind(ctx.tape)?;
        let mut rm = self.running_mean.borrow_mut();
        let mut rv = self.running_var.borrow_mut();
        ops::batch_norm2d(
            x,
            &gamma,
            &beta,
            &mut rm,
            &mut rv,
            ctx.training,
            self.eps,
            self.momentum,
        )
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    /// Zeroes the affine transform so the branch containing this layer
    /// contributes nothing.
    pub fn zero_out(&self) {
        self.gamma.set_value(Tensor::zeros(self.gamma.shape()));
        self.beta.set_value(Tensor::zeros(self.beta.shape()));
    }
}

/// Convolution layer without bias (always followed by a batch norm here).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Parameter,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Conv2d {
        Conv2d {
            weight: Parameter::kaiming_conv(
                format!("{name}.w"),
                vec![c_out, c_in, kernel, kernel],
                rng,
            ),
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: Option<&GradTape>, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.bind(tape)?;
        ops::conv2d(x, &w, self.stride, self.padding)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        vec![self.weight.clone()]
    }
}

/// Token/position/segment lookup table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Parameter,
}

impl Embedding {
    pub fn new(name: &str, vocab: usize, d: usize, rng: &mut Rng) -> Embedding {
        Embedding {
            table: Parameter::randn(format!("{name}.table"), vec![vocab, d], 0.02, rng),
        }
    }

    /// Row gather: output shape is ids.shape + [d].
    pub fn forward(&self, tape: Option<&GradTape>, ids: &IntTensor) -> Result<Tensor> {
        let vocab = self.table.shape()[0];
        let mut rows = Vec::with_capacity(ids.numel());
        for &id in &ids.data {
            if id < 0 || id as usize >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    index: id,
                    bound: vocab,
                });
            }
            rows.push(id as usize);
        }
        let table = self.table.bind(tape)?;
        let gathered = table.gather_rows(&rows)?;
        let mut out_shape = ids.shape.clone();
        out_shape.push(self.table.shape()[1]);
        gathered.reshape(out_shape)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        vec![self.table.clone()]
    }
}

/// Projections for one multi-head attention block. All four maps are square
/// (model_dim x model_dim); heads are split after projection.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub num_heads: usize,
    pub model_dim: usize,
    pub wq: Parameter,
    pub wk: Parameter,
    pub wv: Parameter,
    pub wo: Parameter,
}

impl AttentionParams {
    pub fn new(name: &str, model_dim: usize, num_heads: usize, rng: &mut Rng) -> AttentionParams {
        assert!(
            num_heads > 0 && model_dim % num_heads == 0,
            "model_dim {model_dim} not divisible by {num_heads} heads"
        );
        AttentionParams {
            num_heads,
            model_dim,
            wq: Parameter::xavier(format!("{name}.wq"), model_dim, model_dim, rng),
            wk: Parameter::xavier(format!("{name}.wk"), model_dim, model_dim, rng),
            wv: Parameter::xavier(format!("{name}.wv"), model_dim, model_dim, rng),
            wo: Parameter::xavier(format!("{name}.wo"), model_dim, model_dim, rng),
        }
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        vec![
            self.wq.clone(),
            self.wk.clone(),
            self.wv.clone(),
            self.wo.clone(),
        ]
    }

    /// Scaled dot-product attention with `q_src` as queries and `kv_src` as
    /// keys and values. Masked key positions (mask = false) receive exactly
    /// zero weight. Returns the attended output [B,Sq,d] and the attention
    /// weights [B,h,Sq,Skv].
    pub fn forward(
        &self,
        tape: Option<&GradTape>,
        q_src: &Tensor,
        kv_src: &Tensor,
        key_mask: Option<&BoolTensor>,
    ) -> Result<(Tensor, Tensor)> {
        let d = self.model_dim;
        if q_src.rank() != 3 || kv_src.rank() != 3 || q_src.shape()[2] != d || kv_src.shape()[2] != d
            || q_src.shape()[0] != kv_src.shape()[0]
        {
            return Err(TensorError::ShapeMismatch {
                op: "multi_head_attention",
                lhs: q_src.shape().to_vec(),
                rhs: kv_src.shape().to_vec(),
            });
        }
        let (b, sq) = (q_src.shape()[0], q_src.shape()[1]);
        let skv = kv_src.shape()[1];
        let h = self.num_heads;
        let dh = d / h;

        let split = |x: &Tensor, s: usize| -> Result<Tensor> {
            // [B,S,d] -> [B,h,S,dh]
            x.reshape(vec![b, s, h, dh])?.permute(&[0, 2, 1, 3])
        };
        let q = split(&q_src.matmul(&self.wq.bind(tape)?)?, sq)?;
        let k = split(&kv_src.matmul(&self.wk.bind(tape)?)?, skv)?;
        let v = split(&kv_src.matmul(&self.wv.bind(tape)?)?, skv)?;

        let kt = k.permute(&[0, 1, 3, 2])?; // [B,h,dh,Skv]
        let mut scores = q.matmul(&kt)?.scale(1.0 / (dh as f64).sqrt())?;
        if let Some(mask) = key_mask {
            scores = ops::apply_key_mask(&scores, mask)?;
        }
        let weights = scores.softmax(3)?; // [B,h,Sq,Skv]

        let attended = weights.matmul(&v)?; // [B,h,Sq,dh]
        let merged = attended.permute(&[0, 2, 1, 3])?.reshape(vec![b, sq, d])?;
        let out = merged.matmul(&self.wo.bind(tape)?)?;
        Ok((out, weights))
    }
}

/// Pre-norm transformer encoder layer:
/// x + Drop(Attn(LN1(x))) followed by + Drop(FFN(LN2(.))),
/// with FFN = linear(d -> 4d) -> relu -> linear(4d -> d).
#[derive(Debug)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: AttentionParams,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new(name: &str, d: usize, num_heads: usize, dropout: f64, rng: &mut Rng) -> EncoderLayer {
        EncoderLayer {
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            attn: AttentionParams::new(&format!("{name}.attn"), d, num_heads, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            ff1: Linear::new(&format!("{name}.ff1"), d, 4 * d, rng),
            ff2: Linear::new(&format!("{name}.ff2"), 4 * d, d, rng),
            dropout,
        }
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx,
        x: &Tensor,
        key_mask: Option<&BoolTensor>,
    ) -> Result<Tensor> {
        Ok(self.forward_with_weights(ctx, x, key_mask)?.0)
    }

    /// Also exposes the self-attention weights for inspection.
    pub fn forward_with_weights(
        &self,
        ctx: &mut Ctx,
        x: &Tensor,
        key_mask: Option<&BoolTensor>,
    ) -> Result<(Tensor, Tensor)> {
        let normed = self.ln1.forward(ctx.tape, x)?;
        let (sa, weights) = self.attn.forward(ctx.tape, &normed, &normed, key_mask)?;
        let sa = self.drop(ctx, &sa)?;
        let x1 = x.add(&sa)?;

        let normed = self.ln2.forward(ctx.tape, &x1)?;
        let ff = self.ff1.forward(ctx.tape, &normed)?.relu()?;
        let ff = self.ff2.forward(ctx.tape, &ff)?;
        let ff = self.drop(ctx, &ff)?;
        let out = x1.add(&ff)?;
        Ok((out, weights))
    }

    fn drop(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        if ctx.training && self.dropout > 0.0 {
            ops::dropout(x, self.dropout, true, ctx.rng())
        } else {
            Ok(x.clone())
        }
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = self.ln1.parameters();
        out.extend(self.attn.parameters());
        out.extend(self.ln2.parameters());
        out.extend(self.ff1.parameters());
        out.extend(self.ff2.parameters());
        out
    }

    /// Zeroes the attention output projection and the final FFN layer, which
    /// leaves only the residual paths: the layer becomes an exact identity.
    pub fn zero_residual_branches(&self) {
        self.attn.wo.set_value(Tensor::zeros(self.attn.wo.shape()));
        self.ff2.zero_out();
    }
}
