//! One runner per experiment. Each writes its artifacts into the run
//! directory and returns the numbers it wrote.

pub mod lorenz;
pub mod sine;
pub mod svd;
pub mod vdp;

use serde::Serialize;

/// A sub-run that did not complete.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub name: String,
    pub message: String,
}

impl Failure {
    pub fn new(name: impl Into<String>, error: impl std::fmt::Display) -> Self {
        Self {
            name: name.into(),
            message: error.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Sine(sine::SineOutcome),
    Svd(eal_core::spectral::SvdReport),
    Vdp(vdp::VdpOutcome),
    Lorenz(Box<lorenz::LorenzOutcome>),
}

impl Outcome {
    pub fn failures(&self) -> &[Failure] {
        match self {
            Outcome::Sine(o) => &o.failures,
            Outcome::Svd(_) => &[],
            Outcome::Vdp(o) => &o.failures,
            Outcome::Lorenz(o) => &o.failures,
        }
    }
}
