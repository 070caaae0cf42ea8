use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SequenceModel;
use crate::attention::{AttentionConfig, AttentionLayer, Variant};
use crate::error::{invalid, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    /// Time-delay window length.
    pub p: usize,
    /// Feature count of the series.
    pub d: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_width: usize,
    #[serde(default = "one")]
    pub blocks: usize,
    pub attention: Variant,
    #[serde(default)]
    pub band_l: usize,
    /// Residual connections with layer normalization around each sublayer.
    #[serde(default = "yes")]
    pub residual_norm: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl TransformerConfig {
    /// The Lorenz forecasting architecture: 64-step window, width 64, four
    /// heads, feed-forward width 64, one block.
    pub fn lorenz(attention: Variant) -> Self {
        Self {
            p: 64,
            d: 3,
            d_model: 64,
            heads: 4,
            ffn_width: 64,
            blocks: 1,
            attention,
            band_l: 0,
            residual_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.d == 0 || self.d_model == 0 || self.ffn_width == 0 {
            return Err(invalid("transformer extents must be positive"));
        }
        if self.blocks == 0 {
            return Err(invalid("transformer needs at least one block"));
        }
        self.attention_config().validate()
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            variant: self.attention,
            n: self.p,
            d: self.d_model,
            heads: self.heads,
            band_l: self.band_l,
        }
    }

    pub fn embedding_params(&self) -> usize {
        self.d * self.d_model + self.d_model + 2 * self.d_model
    }

    pub fn block_params(&self) -> usize {
        let (m, f) = (self.d_model, self.ffn_width);
        let norms = if self.residual_norm { 4 * m } else { 0 };
        self.attention_config().param_count() + norms + 2 * m * f + f + m
    }

    pub fn decoder_params(&self) -> usize {
        let m = self.d_model;
        m * m * self.p + m + m * self.d + self.d
    }

    pub fn param_count(&self) -> usize {
        self.embedding_params() + self.blocks * self.block_params() + self.decoder_params()
    }
}

/// Learned time embedding: one linear channel `ω₀t + φ₀` and
/// `d_model − 1` periodic channels `sin(ωᵢt + φᵢ)`.
#[derive(Clone, Debug)]
pub struct Time2Vec {
    pub omega: ParamId,
    pub phi: ParamId,
    width: usize,
}

impl Time2Vec {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            omega: store.add(format!("{prefix}.omega"), Tensor::uniform(&[1, width], 1.0, rng))?,
            phi: store.add(format!("{prefix}.phi"), Tensor::uniform(&[width], 1.0, rng))?,
            width,
        })
    }

    /// The `p × width` embedding of time indices `0..p`.
    pub fn forward(&self, tape: &mut Tape<'_>, p: usize) -> Result<Var> {
        let t = tape.constant(Tensor::from_fn(&[p, 1], |i| i as f64))?;
        let omega = tape.param(self.omega)?;
        let phi = tape.param(self.phi)?;
        let wt = tape.matmul(t, omega)?;
        let z = tape.add_bias(wt, phi)?;
        if self.width == 1 {
            return Ok(z);
        }
        let linear = tape.slice(z, 1, 0, 1)?;
        let rest = tape.slice(z, 1, 1, self.width - 1)?;
        let periodic = tape.sin(rest)?;
        tape.concat(&[linear, periodic], 1)
    }
}

/// Attention sublayer followed by a ReLU feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: AttentionLayer,
    norms: Option<[(ParamId, ParamId); 2]>,
    pub ffn_in: (ParamId, ParamId),
    pub ffn_out: (ParamId, ParamId),
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        let (m, f) = (config.d_model, config.ffn_width);
        let attention = AttentionLayer::new(store, &format!("{prefix}.attn"), &config.attention_config(), rng)?;
        let norms = if config.residual_norm {
            let mut ln = |k: usize| -> Result<(ParamId, ParamId)> {
                Ok((
                    store.add(format!("{prefix}.ln{k}.gain"), Tensor::from_fn(&[m], |_| 1.0))?,
                    store.add(format!("{prefix}.ln{k}.bias"), Tensor::zeros(&[m]))?,
                ))
            };
            Some([ln(1)?, ln(2)?])
        } else {
            None
        };
        let mut dense = |name: &str, fan_in: usize, fan_out: usize| -> Result<(ParamId, ParamId)> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Ok((
                store.add(
                    format!("{prefix}.{name}.w"),
                    Tensor::uniform(&[fan_in, fan_out], bound, rng),
                )?,
                store.add(format!("{prefix}.{name}.b"), Tensor::uniform(&[fan_out], bound, rng))?,
            ))
        };
        let ffn_in = dense("ffn_in", m, f)?;
        let ffn_out = dense("ffn_out", f, m)?;
        Ok(Self {
            attention,
            norms,
            ffn_in,
            ffn_out,
        })
    }

    fn sublayer_merge(&self, tape: &mut Tape<'_>, x: Var, y: Var, k: usize) -> Result<Var> {
        match self.norms {
            Some(norms) => {
                let sum = tape.add(x, y)?;
                let (g, b) = norms[k];
                let (g, b) = (tape.param(g)?, tape.param(b)?);
                tape.layer_norm(sum, g, b, LN_EPS)
            }
            None => Ok(y),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let a = self.attention.forward(tape, x)?;
        let h = self.sublayer_merge(tape, x, a, 0)?;
        let (w1, b1) = (tape.param(self.ffn_in.0)?, tape.param(self.ffn_in.1)?);
        let (w2, b2) = (tape.param(self.ffn_out.0)?, tape.param(self.ffn_out.1)?);
        let z = tape.matmul(h, w1)?;
        let z = tape.add_bias(z, b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, w2)?;
        let f = tape.add_bias(z, b2)?;
        self.sublayer_merge(tape, h, f, 1)
    }
}

/// Encoder-only forecaster: embedding, encoder blocks, then a width-`p`
/// convolution over time and a linear readout to the next state.
#[derive(Clone, Debug)]
pub struct Transformer {
    name: String,
    config: TransformerConfig,
    store: ParamStore,
    pub embed: (ParamId, ParamId),
    pub time2vec: Time2Vec,
    pub blocks: Vec<EncoderBlock>,
    pub conv: (ParamId, ParamId),
    pub head: (ParamId, ParamId),
}

impl Transformer {
    pub fn new(name: impl Into<String>, config: &TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (p, d, m) = (config.p, config.d, config.d_model);
        let mut store = ParamStore::new();
        let bd = 1.0 / (d as f64).sqrt();
        let embed = (
            store.add("embed.w", Tensor::uniform(&[d, m], bd, rng))?,
            store.add("embed.b", Tensor::uniform(&[m], bd, rng))?,
        );
        let time2vec = Time2Vec::new(&mut store, "time2vec", m, rng)?;
        let blocks = (0..config.blocks)
            .map(|b| EncoderBlock::new(&mut store, &format!("block{b}"), config, rng))
            .collect::<Result<_>>()?;
        let bc = 1.0 / ((m * p) as f64).sqrt();
        let conv = (
            store.add("decoder.conv.w", Tensor::uniform(&[m, m, p], bc, rng))?,
            store.add("decoder.conv.b", Tensor::uniform(&[m], bc, rng))?,
        );
        let bm = 1.0 / (m as f64).sqrt();
        let head = (
            store.add("decoder.head.w", Tensor::uniform(&[m, d], bm, rng))?,
            store.add("decoder.head.b", Tensor::uniform(&[d], bm, rng))?,
        );
        Ok(Self {
            name: name.into(),
            config: config.clone(),
            store,
            embed,
            time2vec,
            blocks,
            conv,
            head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn embed(&self, tape: &mut Tape<'_>, window: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.embed.0)?, tape.param(self.embed.1)?);
        let z = tape.matmul(window, w)?;
        let z = tape.add_bias(z, b)?;
        let t2v = self.time2vec.forward(tape, self.config.p)?;
        tape.add(z, t2v)
    }

    /// Collapses the `p × d_model` encoder output to a `1 × d` prediction.
    pub fn decode(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var> {
        let ht = tape.transpose(h)?;
        let (k, kb) = (tape.param(self.conv.0)?, tape.param(self.conv.1)?);
        let c = tape.conv1d(ht, k, Some(kb))?;
        let c = tape.reshape(c, &[1, self.config.d_model])?;
        let (w, b) = (tape.param(self.head.0)?, tape.param(self.head.1)?);
        let y = tape.matmul(c, w)?;
        tape.add_bias(y, b)
    }
}

impl SequenceModel for Transformer {
    fn name(&self) -> &str {
        &self.name
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var> {
        let shape = tape.shape(input);
        if shape != [self.config.p, self.config.d] {
            return Err(crate::Error::Dimension {
                op: "transformer",
                lhs: shape.to_vec(),
                rhs: vec![self.config.p, self.config.d],
            });
        }
        let mut h = self.embed(tape, input)?;
        for block in &self.blocks {
            h = block.forward(tape, h)?;
        }
        self.decode(tape, h)
    }

    fn formula_param_count(&self) -> usize {
        self.config.param_count()
    }

    fn attention_flops(&self) -> Option<u64> {
        Some(self.config.blocks as u64 * self.config.attention_config().flops_estimate())
    }

    fn forward_macs(&self) -> u64 {
        let c = &self.config;
        let (p, d, m, f) = (c.p as u64, c.d as u64, c.d_model as u64, c.ffn_width as u64);
        let block = c.attention_config().forward_macs() + 2 * p * m * f;
        p * d * m + c.blocks as u64 * block + m * m * p + m * d
    }
}
