//! Trainable sequence models built on the tape.

mod lstm;
mod transformer;

pub use lstm::{Lstm, LstmConfig};
pub use transformer::{EncoderBlock, Time2Vec, Transformer, TransformerConfig};

use rand::Rng;

use crate::attention::{AttentionConfig, AttentionLayer};
use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// A model mapping one input tensor to one output tensor.
pub trait SequenceModel: Send + Sync {
    fn name(&self) -> &str;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var>;
    /// Trainable scalar count from closed-form layer formulas.
    fn formula_param_count(&self) -> usize;
    /// Attention-core operation count, when the model has attention.
    fn attention_flops(&self) -> Option<u64> {
        None
    }
    /// Multiply-accumulates of one forward pass.
    fn forward_macs(&self) -> u64;

    /// Evaluates the model outside of training.
    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::with_params(self.params());
        let x = tape.constant(input.clone())?;
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// A bare attention layer used as a whole model (`n × d` in, `n × d` out).
#[derive(Clone, Debug)]
pub struct AttentionModel {
    name: String,
    store: ParamStore,
    pub layer: AttentionLayer,
}

impl AttentionModel {
    pub fn new(name: impl Into<String>, config: &AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "attn", config, rng)?;
        Ok(Self {
            name: name.into(),
            store,
            layer,
        })
    }
}

impl SequenceModel for AttentionModel {
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
        self.layer.forward(tape, input)
    }

    fn formula_param_count(&self) -> usize {
        self.layer.config().param_count()
    }

    fn attention_flops(&self) -> Option<u64> {
        Some(self.layer.config().flops_estimate())
    }

    fn forward_macs(&self) -> u64 {
        self.layer.config().forward_macs()
    }
}
