use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::Gradients;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    SgdMomentum {
        learning_rate: f64,
        momentum: f64,
    },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self::SgdMomentum {
            learning_rate,
            momentum,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::Adam {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            Self::SgdMomentum { learning_rate, .. } | Self::Adam { learning_rate, .. } => learning_rate,
        }
    }
}

/// Optimizer state with one buffer set per registered parameter.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            first: zeros(),
            second,
            step_count: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// SGD velocity or Adam first moment for parameter `index`.
    pub fn velocity(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.param_count() != params.len() || self.first.len() != params.len() {
            return Err(Error::MissingGrads {
                expected: params.len(),
                actual: grads.param_count(),
            });
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::SgdMomentum {
                learning_rate,
                momentum,
            } => {
                for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
                    let g = grads.param(id);
                    let v = &mut self.first[i];
                    let theta = params.get_mut(id).data_mut();
                    for j in 0..theta.len() {
                        v[j] = momentum * v[j] + g[j];
                        theta[j] -= learning_rate * v[j];
                    }
                }
            }
            OptimizerKind::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
                    let g = grads.param(id);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    let theta = params.get_mut(id).data_mut();
                    for j in 0..theta.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        theta[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
