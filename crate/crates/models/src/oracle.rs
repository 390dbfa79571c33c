//! Independent scalar reference for the fusion forward passes.
//!
//! Everything here is plain nested loops over `f64` reading parameter
//! values; none of the tensor ops or the tape are used. The verification
//! suite compares [`fusion_forward`] against the real implementation.

use crate::fusion::{FusionKind, FusionModel};

pub type Mat = Vec<Vec<f64>>;

fn mat_of(t: &mmfs_core::Tensor) -> Mat {
    assert_eq!(t.rank(), 2);
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r)
        .map(|i| (0..c).map(|j| t.data()[i * c + j]).collect())
        .collect()
}

fn vec_of(t: &mmfs_core::Tensor) -> Vec<f64> {
    t.data().to_vec()
}

/// y = x W + b with W stored [in][out].
pub fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let out = w[0].len();
    let mut y = b.to_vec();
    assert_eq!(y.len(), out);
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..out {
            y[j] += xi * w[i][j];
        }
    }
    y
}

fn matvec_rows(rows: &Mat, w: &Mat, b: &[f64]) -> Mat {
    rows.iter().map(|r| affine(r, w, b)).collect()
}

fn relu_v(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn add_v(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn softmax_v(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len();
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv = 1.0 / (var + eps).sqrt();
    (0..d)
        .map(|j| gamma[j] * (x[j] - mean) * inv + beta[j])
        .collect()
}

fn mean_rows(rows: &Mat) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            out[j] += r[j];
        }
    }
    for v in out.iter_mut() {
        *v /= rows.len() as f64;
    }
    out
}

fn concat_v(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = a.to_vec();
    out.extend_from_slice(b);
    out
}

pub struct AttnW {
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
    heads: usize,
}

impl AttnW {
    pub fn from(params: &mmfs_core::nn::AttentionParams) -> AttnW {
        AttnW {
            wq: mat_of(&params.wq.value()),
            wk: mat_of(&params.wk.value()),
            wv: mat_of(&params.wv.value()),
            wo: mat_of(&params.wo.value()),
            heads: params.num_heads,
        }
    }

    /// Multi-head scaled dot-product attention, one query row at a time.
    /// Masked key positions get -inf scores before the softmax.
    pub fn run(&self, queries: &Mat, keys_values: &Mat, mask: Option<&[bool]>) -> Mat {
        let d = self.wq[0].len();
        let dh = d / self.heads;
        let zero_bias = vec![0.0; d];
        let q = matvec_rows(queries, &self.wq, &zero_bias);
        let k = matvec_rows(keys_values, &self.wk, &zero_bias);
        let v = matvec_rows(keys_values, &self.wv, &zero_bias);
        let mut merged: Mat = vec![vec![0.0; d]; queries.len()];
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            for (qi, q_row) in q.iter().enumerate() {
                let mut scores = Vec::with_capacity(k.len());
                for (ki, k_row) in k.iter().enumerate() {
                    let keep = mask.map_or(true, |m| m[ki]);
                    if keep {
                        let dot: f64 = cols.clone().map(|c| q_row[c] * k_row[c]).sum();
                        scores.push(dot / (dh as f64).sqrt());
                    } else {
                        scores.push(f64::NEG_INFINITY);
                    }
                }
                let weights = softmax_v(&scores);
                for (ki, v_row) in v.iter().enumerate() {
                    for (offset, c) in cols.clone().enumerate() {
                        merged[qi][h * dh + offset] += weights[ki] * v_row[c];
                    }
                }
            }
        }
        matvec_rows(&merged, &self.wo, &zero_bias)
    }
}

pub struct EncoderW {
    ln1_g: Vec<f64>,
    ln1_b: Vec<f64>,
    attn: AttnW,
    ln2_g: Vec<f64>,
    ln2_b: Vec<f64>,
    ff1_w: Mat,
    ff1_b: Vec<f64>,
    ff2_w: Mat,
    ff2_b: Vec<f64>,
}

impl EncoderW {
    pub fn from(layer: &mmfs_core::nn::EncoderLayer) -> EncoderW {
        EncoderW {
            ln1_g: vec_of(&layer.ln1.gamma.value()),
            ln1_b: vec_of(&layer.ln1.beta.value()),
            attn: AttnW::from(&layer.attn),
            ln2_g: vec_of(&layer.ln2.gamma.value()),
            ln2_b: vec_of(&layer.ln2.beta.value()),
            ff1_w: mat_of(&layer.ff1.weight.value()),
            ff1_b: vec_of(&layer.ff1.bias.value()),
            ff2_w: mat_of(&layer.ff2.weight.value()),
            ff2_b: vec_of(&layer.ff2.bias.value()),
        }
    }

    /// Pre-norm wiring: x + Attn(LN1(x)), then + FFN(LN2(.)).
    pub fn run(&self, rows: &Mat, mask: Option<&[bool]>) -> Mat {
        let eps = 1e-5;
        let normed: Mat = rows
            .iter()
            .map(|r| layer_norm_row(r, &self.ln1_g, &self.ln1_b, eps))
            .collect();
        let attended = self.attn.run(&normed, &normed, mask);
        let x1: Mat = rows.iter().zip(&attended).map(|(r, a)| add_v(r, a)).collect();
        let normed2: Mat = x1
            .iter()
            .map(|r| layer_norm_row(r, &self.ln2_g, &self.ln2_b, eps))
            .collect();
        let mut out = Vec::with_capacity(rows.len());
        for (row, n) in x1.iter().zip(&normed2) {
            let hidden = relu_v(&affine(n, &self.ff1_w, &self.ff1_b));
            let ff = affine(&hidden, &self.ff2_w, &self.ff2_b);
            out.push(add_v(row, &ff));
        }
        out
    }
}

pub struct ClassifierW {
    l1_w: Mat,
    l1_b: Vec<f64>,
    l2_w: Mat,
    l2_b: Vec<f64>,
}

impl ClassifierW {
    pub fn from(c: &crate::fusion::Classifier) -> ClassifierW {
        ClassifierW {
            l1_w: mat_of(&c.l1.weight.value()),
            l1_b: vec_of(&c.l1.bias.value()),
            l2_w: mat_of(&c.l2.weight.value()),
            l2_b: vec_of(&c.l2.bias.value()),
        }
    }

    pub fn run(&self, x: &[f64]) -> Vec<f64> {
        let h = relu_v(&affine(x, &self.l1_w, &self.l1_b));
        affine(&h, &self.l2_w, &self.l2_b)
    }
}

pub struct LinearW {
    w: Mat,
    b: Vec<f64>,
}

impl LinearW {
    pub fn from(l: &mmfs_core::nn::Linear) -> LinearW {
        LinearW {
            w: mat_of(&l.weight.value()),
            b: vec_of(&l.bias.value()),
        }
    }

    pub fn run_rows(&self, rows: &Mat) -> Mat {
        matvec_rows(rows, &self.w, &self.b)
    }

    pub fn run(&self, x: &[f64]) -> Vec<f64> {
        affine(x, &self.w, &self.b)
    }
}

/// One sample's encodings as plain rows/vectors.
pub struct OracleInput {
    pub text_rows: Mat,
    pub text_pooled: Vec<f64>,
    pub text_mask: Vec<bool>,
    pub image_rows: Mat,
    pub image_pooled: Vec<f64>,
}

/// Recomputes one fusion forward pass (batch size 1) with scalar loops and
/// returns the fused probability vector.
pub fn fusion_forward(model: &FusionModel, input: &OracleInput) -> Vec<f64> {
    let proj = |l: &Option<mmfs_core::nn::Linear>| LinearW::from(l.as_ref().unwrap());
    match model.kind {
        FusionKind::Cmac => {
            let h_t = proj(&model.proj_hidden_text).run_rows(&input.text_rows);
            let f_t = proj(&model.proj_pooled_text).run(&input.text_pooled);
            let h_i = proj(&model.proj_hidden_image).run_rows(&input.image_rows);
            let f_i = proj(&model.proj_pooled_image).run(&input.image_pooled);
            let attn_i2t = AttnW::from(model.attn_image_to_text.as_ref().unwrap());
            let attn_t2i = AttnW::from(model.attn_text_to_image.as_ref().unwrap());
            let a_i2t = mean_rows(&attn_i2t.run(&h_i, &h_t, Some(&input.text_mask)));
            let a_t2i = mean_rows(&attn_t2i.run(&h_t, &h_i, None));
            let p_t = ClassifierW::from(model.text_classifier.as_ref().unwrap())
                .run(&concat_v(&f_t, &a_i2t));
            let p_i = ClassifierW::from(model.image_classifier.as_ref().unwrap())
                .run(&concat_v(&f_i, &a_t2i));
            softmax_v(&add_v(&p_t, &p_i))
        }
        FusionKind::Hstec => {
            let mut joint = proj(&model.proj_hidden_text).run_rows(&input.text_rows);
            joint.extend(proj(&model.proj_hidden_image).run_rows(&input.image_rows));
            let mut mask = input.text_mask.clone();
            mask.extend(std::iter::repeat(true).take(input.image_rows.len()));
            let fused = EncoderW::from(model.encoder_layer.as_ref().unwrap()).run(&joint, Some(&mask));
            let a = mean_rows(&fused);
            let f_t = proj(&model.proj_pooled_text).run(&input.text_pooled);
            let f_i = proj(&model.proj_pooled_image).run(&input.image_pooled);
            let p_t = ClassifierW::from(model.text_classifier.as_ref().unwrap())
                .run(&concat_v(&f_t, &a));
            let p_i = ClassifierW::from(model.image_classifier.as_ref().unwrap())
                .run(&concat_v(&f_i, &a));
            softmax_v(&add_v(&p_t, &p_i))
        }
        FusionKind::Ote => {
            let f_t = proj(&model.proj_pooled_text).run(&input.text_pooled);
            let f_i = proj(&model.proj_pooled_image).run(&input.image_pooled);
            let tokens = if model.config.ote_literal_concat {
                vec![concat_v(&f_i, &f_t)]
            } else {
                vec![f_i, f_t]
            };
            let fused = EncoderW::from(model.encoder_layer.as_ref().unwrap()).run(&tokens, None);
            let pooled = mean_rows(&fused);
            softmax_v(&ClassifierW::from(model.classifier.as_ref().unwrap()).run(&pooled))
        }
        FusionKind::NativeCat => {
            let f_t = proj(&model.proj_pooled_text).run(&input.text_pooled);
            let f_i = proj(&model.proj_pooled_image).run(&input.image_pooled);
            softmax_v(
                &ClassifierW::from(model.classifier.as_ref().unwrap()).run(&concat_v(&f_t, &f_i)),
            )
        }
        FusionKind::NativeCombine => {
            let f_t = proj(&model.proj_pooled_text).run(&input.text_pooled);
            let f_i = proj(&model.proj_pooled_image).run(&input.image_pooled);
            let p_t = ClassifierW::from(model.text_classifier.as_ref().unwrap()).run(&f_t);
            let p_i = ClassifierW::from(model.image_classifier.as_ref().unwrap()).run(&f_i);
            softmax_v(&add_v(&p_t, &p_i))
        }
        FusionKind::TextOnly => {
            let f_t = proj(&model.proj_pooled_text).run(&input.text_pooled);
            softmax_v(&ClassifierW::from(model.classifier.as_ref().unwrap()).run(&f_t))
        }
        FusionKind::ImageOnly => {
            let f_i = proj(&model.proj_pooled_image).run(&input.image_pooled);
            softmax_v(&ClassifierW::from(model.classifier.as_ref().unwrap()).run(&f_i))
        }
    }
}
