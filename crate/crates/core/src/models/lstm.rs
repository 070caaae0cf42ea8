use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SequenceModel;
use crate::error::{invalid, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    pub p: usize,
    pub d: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    128
}

impl LstmConfig {
    pub fn lorenz() -> Self {
        Self {
            p: 64,
            d: 3,
            hidden: 128,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, h) = (self.d, self.hidden);
        d * 4 * h + h * 4 * h + 4 * h + h * d + d
    }
}

/// One-layer LSTM over the window, read out linearly from the last hidden
/// state. Gate blocks are stored side by side in the order input, forget,
/// cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    name: String,
    config: LstmConfig,
    store: ParamStore,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub head: (ParamId, ParamId),
}

impl Lstm {
    pub fn new(name: impl Into<String>, config: &LstmConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.p == 0 || config.d == 0 || config.hidden == 0 {
            return Err(invalid("lstm extents must be positive"));
        }
        let (d, h) = (config.d, config.hidden);
        let bound = 1.0 / (h as f64).sqrt();
        let mut store = ParamStore::new();
        let w_x = store.add("lstm.w_x", Tensor::uniform(&[d, 4 * h], bound, rng))?;
        let w_h = store.add("lstm.w_h", Tensor::uniform(&[h, 4 * h], bound, rng))?;
        let bias = store.add("lstm.b", Tensor::uniform(&[4 * h], bound, rng))?;
        let head = (
            store.add("head.w", Tensor::uniform(&[h, d], bound, rng))?,
            store.add("head.b", Tensor::uniform(&[d], bound, rng))?,
        );
        Ok(Self {
            name: name.into(),
            config: config.clone(),
            store,
            w_x,
            w_h,
            bias,
            head,
        })
    }

    pub fn config(&self) -> &LstmConfig {
        &self.config
    }

    /// Runs the recurrence and returns every hidden state (`1 × hidden` each).
    pub fn hidden_states(&self, tape: &mut Tape<'_>, input: Var) -> Result<Vec<Var>> {
        let shape = tape.shape(input);
        if shape.len() != 2 || shape[1] != self.config.d {
            return Err(crate::Error::Dimension {
                op: "lstm",
                lhs: shape.to_vec(),
                rhs: vec![self.config.p, self.config.d],
            });
        }
        let steps = shape[0];
        let hsz = self.config.hidden;
        let w_x = tape.param(self.w_x)?;
        let w_h = tape.param(self.w_h)?;
        let b = tape.param(self.bias)?;
        let xw = tape.matmul(input, w_x)?;
        let xw = tape.add_bias(xw, b)?;
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut gates = tape.slice(xw, 0, t, 1)?;
            if let Some(h) = h {
                let rec = tape.matmul(h, w_h)?;
                gates = tape.add(gates, rec)?;
            }
            let i = tape.slice(gates, 1, 0, hsz)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice(gates, 1, hsz, hsz)?;
            let f = tape.sigmoid(f)?;
            let g = tape.slice(gates, 1, 2 * hsz, hsz)?;
            let g = tape.tanh(g)?;
            let o = tape.slice(gates, 1, 3 * hsz, hsz)?;
            let o = tape.sigmoid(o)?;
            let ig = tape.hadamard(i, g)?;
            let c_new = match c {
                Some(c) => {
                    let fc = tape.hadamard(f, c)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c_new)?;
            let h_new = tape.hadamard(o, tc)?;
            c = Some(c_new);
            h = Some(h_new);
            states.push(h_new);
        }
        Ok(states)
    }
}

impl SequenceModel for Lstm {
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
        let states = self.hidden_states(tape, input)?;
        let last = *states.last().ok_or_else(|| invalid("lstm needs at least one step"))?;
        let (w, b) = (tape.param(self.head.0)?, tape.param(self.head.1)?);
        let y = tape.matmul(last, w)?;
        tape.add_bias(y, b)
    }

    fn formula_param_count(&self) -> usize {
        self.config.param_count()
    }

    fn forward_macs(&self) -> u64 {
        let (p, d, h) = (self.config.p as u64, self.config.d as u64, self.config.hidden as u64);
        p * (d + h) * 4 * h + h * d
    }
}
