//! Easy attention and its baselines for temporal-dynamics prediction.
//!
//! The crate is framework-free: [`tensor`] provides a small reverse-mode
//! autodiff tape over dense `f64` matrices, and everything else is built on
//! top of it.
//!
//! * [`attention`]: self attention, dense/sparse easy attention and
//!   multi-head easy attention, with parameter and operation accounting.
//! * [`models`]: the time2vec transformer encoder and an LSTM baseline.
//! * [`dynsys`]: RK4 data generation for Lorenz and forced Van der Pol
//!   systems, the phase-shifted sine dataset and time-delay windowing.
//! * [`spectral`]: DFT machinery, multi-attention reconstruction and SVD
//!   analysis of attention scores.
//! * [`trainer`]: training loops, rollouts and metrics.

pub mod attention;
pub mod dynsys;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod seed;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
