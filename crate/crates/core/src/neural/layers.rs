//! Transformer encoder building blocks on top of [`Graph`].

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Sinusoidal position table: `PE[p, 2i] = sin(p / 10000^(2i/d))` and
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(length: usize, d: usize) -> Result<Tensor<T>> {
    if d % 2 != 0 {
        return Err(Error::OddDimension(d));
    }
    let mut values = Vec::with_capacity(length * d);
    for pos in 0..length {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            values.push(T::lit(angle.sin()));
            values.push(T::lit(angle.cos()));
        }
    }
    Ok(Tensor::from_rows(length, d, values))
}

/// Affine map `x W + b` with `W: d_in x d_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut StreamRng) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), d_in, d_out, d_in, rng);
        let b = store.add_uniform(format!("{name}.bias"), 1, d_out, d_in, rng);
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        let gain = store.add_const(format!("{name}.gain"), 1, d, 1.0);
        let bias = store.add_const(format!("{name}.bias"), 1, d, 0.0);
        Self { gain, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Encoder geometry shared by the acoustic context network and the text model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ff_mult: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_model: 64, heads: 4, layers: 2, ff_mult: 4, dropout: 0.1 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "model dim {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Multi-head self-attention projections. Heads are column blocks of the
/// `d x d` query/key/value matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, rng: &mut StreamRng) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            output: Linear::new(store, &format!("{name}.output"), d, d, rng),
            heads,
        }
    }

    pub fn d_model(&self) -> usize {
        self.query.d_in
    }
}

/// Output of [`self_attention`].
pub struct Attention {
    pub output: Var,
    /// One `T x T` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

fn check_sequence<T: Scalar>(g: &Graph<T>, x: Var, d: usize, mask: Option<&[bool]>) -> Result<usize> {
    let tx = g.value(x);
    if tx.rows() == 0 {
        return Err(Error::ShapeMismatch("empty sequence".into()));
    }
    if tx.cols() != d {
        return Err(Error::ShapeMismatch(format!("input width {} vs model dim {d}", tx.cols())));
    }
    if let Some(m) = mask {
        if m.len() != tx.rows() {
            return Err(Error::ShapeMismatch(format!("mask of {} for {} positions", m.len(), tx.rows())));
        }
        if m.iter().all(|&b| b) {
            return Err(Error::ShapeMismatch("every position masked".into()));
        }
    }
    Ok(tx.rows())
}

/// Scaled dot-product attention. `mask[t] == true` hides key position `t`.
pub fn self_attention<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    params: &AttentionParams,
    mask: Option<&[bool]>,
) -> Result<Attention> {
    let d = params.d_model();
    check_sequence(g, x, d, mask)?;
    let dh = d / params.heads;
    let q = params.query.forward(g, store, x);
    let k = params.key.forward(g, store, x);
    let v = params.value.forward(g, store, x);
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut heads = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.matmul_bt(qh, kh);
        let scores = g.scale(scores, scale);
        let attn = g.softmax_masked(scores, mask);
        weights.push(attn);
        heads.push(g.matmul(attn, vh));
    }
    let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
    let output = params.output.forward(g, store, merged);
    Ok(Attention { output, weights })
}

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderBlockParams {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    pub norm2: LayerNormParams,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub dropout: f64,
}

impl EncoderBlockParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: &EncoderConfig, rng: &mut StreamRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let hidden = cfg.ff_mult * d;
        Ok(Self {
            attention: AttentionParams::new(store, &format!("{name}.attn"), d, cfg.heads, rng),
            norm1: LayerNormParams::new(store, &format!("{name}.norm1"), d),
            norm2: LayerNormParams::new(store, &format!("{name}.norm2"), d),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), d, hidden, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), hidden, d, rng),
            dropout: cfg.dropout,
        })
    }
}

/// `h = x + Dropout(MHA(LN(x)))`, then `h + Dropout(FFN(LN(h)))`. Dropout
/// only applies when `training` is set.
pub fn encoder_block<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    params: &EncoderBlockParams,
    mask: Option<&[bool]>,
    training: bool,
    rng: &mut StreamRng,
) -> Result<Var> {
    let p = if training { params.dropout } else { 0.0 };
    let n1 = params.norm1.forward(g, store, x);
    let attn = self_attention(g, store, n1, &params.attention, mask)?;
    let attn = g.dropout(attn.output, p, rng);
    let h = g.add(x, attn);
    let n2 = params.norm2.forward(g, store, h);
    let f = params.ff_in.forward(g, store, n2);
    let f = g.gelu(f);
    let f = params.ff_out.forward(g, store, f);
    let f = g.dropout(f, p, rng);
    Ok(g.add(h, f))
}

/// Stack of encoder blocks with a closing layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub blocks: Vec<EncoderBlockParams>,
    pub final_norm: LayerNormParams,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, config: EncoderConfig, rng: &mut StreamRng) -> Result<Self> {
        let blocks = (0..config.layers)
            .map(|i| EncoderBlockParams::new(store, &format!("{name}.block{i}"), &config, rng))
            .collect::<Result<_>>()?;
        let final_norm = LayerNormParams::new(store, &format!("{name}.final_norm"), config.d_model);
        Ok(Self { config, blocks, final_norm })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: Option<&[bool]>,
        training: bool,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = encoder_block(g, store, h, block, mask, training, rng)?;
        }
        Ok(self.final_norm.forward(g, store, h))
    }
}
