//! Fourier decomposition, multi-attention reconstruction and the SVD
//! analysis of attention scores.

mod svd;

pub use svd::{svd, svd_analyze, MatrixFamily, SampleSvd, Svd, SvdReport};

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, Variant};
use crate::error::{invalid, Error, Result};
pub use crate::metrics::{reconstruction_energy, rel_l2};
use crate::models::{AttentionModel, SequenceModel};
use crate::seed::{derive_seed, rng_for};
use crate::tensor::{OptimizerKind, Tensor};
use crate::trainer::{train, TrainSpec};

/// Spectrum of a real signal.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDecomposition {
    pub coefficients: Vec<Complex64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    /// Cycles per sample, negative above the Nyquist bin.
    pub frequencies: Vec<f64>,
    /// All bins by descending amplitude, ties by ascending index.
    pub top_k: Vec<usize>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// The bin paired with `bin` by conjugate symmetry.
    pub fn partner(&self, bin: usize) -> usize {
        (self.len() - bin) % self.len()
    }

    /// Canonical representative (`≤ M/2`) of a conjugate pair.
    pub fn canonical(&self, bin: usize) -> usize {
        bin.min(self.partner(bin))
    }

    /// Period in samples of a canonical bin; infinite for DC.
    pub fn period(&self, bin: usize) -> f64 {
        let k = self.canonical(bin);
        if k == 0 {
            f64::INFINITY
        } else {
            self.len() as f64 / k as f64
        }
    }

    /// Time-domain energy `Σₜ c(t)²` of the unit containing `bin`.
    pub fn unit_energy(&self, bin: usize) -> f64 {
        let k = self.canonical(bin);
        let a = self.amplitudes[k];
        let e = a * a / self.len() as f64;
        if k == self.partner(k) {
            e
        } else {
            2.0 * e
        }
    }

    /// Conjugate-pair units by descending amplitude, ties by ascending bin.
    pub fn units(&self) -> Vec<usize> {
        self.top_k.iter().copied().filter(|&k| k <= self.partner(k)).collect()
    }
}

fn fft(data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse {
        planner.plan_fft_inverse(data.len())
    } else {
        planner.plan_fft_forward(data.len())
    };
    plan.process(data);
}

pub fn dft(signal: &[f64]) -> Result<SpectralDecomposition> {
    if signal.is_empty() {
        return Err(invalid("cannot transform an empty signal"));
    }
    let m = signal.len();
    let mut coefficients: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut coefficients, false);
    let amplitudes: Vec<f64> = coefficients.iter().map(|c| c.norm()).collect();
    let phases = coefficients.iter().map(|c| c.arg()).collect();
    let frequencies = (0..m)
        .map(|k| {
            if 2 * k <= m {
                k as f64 / m as f64
            } else {
                k as f64 / m as f64 - 1.0
            }
        })
        .collect();
    let mut top_k: Vec<usize> = (0..m).collect();
    top_k.sort_by(|&a, &b| amplitudes[b].total_cmp(&amplitudes[a]).then(a.cmp(&b)));
    Ok(SpectralDecomposition {
        coefficients,
        amplitudes,
        phases,
        frequencies,
        top_k,
    })
}

/// Synthesizes the signal from the bins in `keep`; each bin's conjugate
/// partner is included automatically so the output is real.
pub fn idft(dec: &SpectralDecomposition, keep: &[usize]) -> Result<Vec<f64>> {
    let m = dec.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for &k in keep {
        if k >= m {
            return Err(invalid(format!("bin {k} out of range for length {m}")));
        }
        buf[k] = dec.coefficients[k];
        let q = dec.partner(k);
        buf[q] = dec.coefficients[q];
    }
    fft(&mut buf, true);
    Ok(buf.iter().map(|c| c.re / m as f64).collect())
}

/// The real sinusoid `A·cos(2πft + φ)` contributed by `bin` together with
/// its conjugate partner.
pub fn component_wave(dec: &SpectralDecomposition, bin: usize) -> Result<Vec<f64>> {
    let m = dec.len();
    if bin >= m {
        return Err(invalid(format!("bin {bin} out of range for length {m}")));
    }
    let k = dec.canonical(bin);
    let scale = if k == dec.partner(k) { 1.0 } else { 2.0 };
    let amp = scale * dec.amplitudes[k] / m as f64;
    let phase = dec.phases[k];
    Ok((0..m)
        .map(|t| amp * (2.0 * PI * (k * t % m) as f64 / m as f64 + phase).cos())
        .collect())
}

/// Reconstruction energy of the first `k` units, from Parseval.
pub fn truncation_energy(dec: &SpectralDecomposition, k: usize) -> f64 {
    let units = dec.units();
    let total: f64 = units.iter().map(|&b| dec.unit_energy(b)).sum();
    if total == 0.0 {
        return 100.0;
    }
    let dropped: f64 = units.iter().skip(k).map(|&b| dec.unit_energy(b)).sum();
    (1.0 - (dropped.max(0.0) / total).sqrt()) * 100.0
}

/// Smallest number of conjugate-pair units whose truncated reconstruction
/// reaches `target_energy` percent.
pub fn select_top_k(dec: &SpectralDecomposition, target_energy: f64) -> Result<usize> {
    if !(target_energy > 0.0 && target_energy <= 100.0) {
        return Err(invalid(format!("target energy {target_energy} outside (0, 100]")));
    }
    let units = dec.units();
    let energies: Vec<f64> = units.iter().map(|&b| dec.unit_energy(b)).collect();
    let total: f64 = energies.iter().sum();
    if total == 0.0 {
        return Ok(1);
    }
    let mut dropped = total;
    for (i, e) in energies.iter().enumerate() {
        dropped -= e;
        let rest: f64 = if i + 1 == energies.len() { 0.0 } else { dropped.max(0.0) };
        if (1.0 - (rest / total).sqrt()) * 100.0 >= target_energy {
            return Ok(i + 1);
        }
    }
    Ok(units.len())
}

/// Training knobs of the per-frequency attention modules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleTraining {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ModuleTraining {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::sgd(1e-3, 0.98),
            epochs: 1000,
            batch_size: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitResult {
    pub bin: usize,
    pub amplitude: f64,
    pub period: f64,
    pub input_size: usize,
    /// Relative l2 error of the learned component, as a fraction. A
    /// diverged unit contributes nothing and scores exactly 1.
    pub epsilon: f64,
    pub diverged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiAttentionResult {
    pub reconstruction: Vec<f64>,
    pub units: Vec<UnitResult>,
    /// Mean per-unit error, as a fraction.
    pub mean_epsilon: f64,
    pub energy: f64,
    pub truncation_energy: f64,
}

impl MultiAttentionResult {
    pub fn diverged_units(&self) -> usize {
        self.units.iter().filter(|u| u.diverged).count()
    }
}

/// A free-running module whose normalized output exceeds this magnitude is
/// treated as diverged.
pub const DIVERGENCE_BOUND: f64 = 10.0;

/// Input size of the module learning a unit: `max(2, ⌈P⌉)`.
pub fn module_input_size(dec: &SpectralDecomposition, bin: usize) -> usize {
    let p = dec.period(bin);
    if p.is_finite() {
        (p.ceil() as usize).max(2)
    } else {
        2
    }
}

/// Circular one-step-ahead windows of a periodic wave: window `s` holds
/// samples `s … s+n−1` (mod M) and the target is the same window one
/// sample later.
pub struct CircularWindows {
    wave: Vec<f64>,
    n: usize,
}

impl CircularWindows {
    pub fn new(wave: Vec<f64>, n: usize) -> Self {
        Self { wave, n }
    }

    fn window(&self, start: usize) -> Tensor {
        let m = self.wave.len();
        Tensor::from_fn(&[self.n, 1], |i| self.wave[(start + i) % m])
    }
}

impl crate::dynsys::Dataset for CircularWindows {
    fn len(&self) -> usize {
        self.wave.len()
    }

    fn sample(&self, index: usize) -> (Tensor, Tensor) {
        (self.window(index), self.window(index + 1))
    }
}

enum UnitOutcome {
    Learned(Vec<f64>),
    Diverged(String),
}

fn learn_unit(
    dec: &SpectralDecomposition,
    bin: usize,
    variant: Variant,
    training: &ModuleTraining,
    seed: u64,
) -> Result<UnitOutcome> {
    let wave = component_wave(dec, bin)?;
    let m = wave.len();
    let peak = wave.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return Ok(UnitOutcome::Learned(wave));
    }
    let unit: Vec<f64> = wave.iter().map(|v| v / peak).collect();
    let n = module_input_size(dec, bin);
    let config = AttentionConfig::new(variant, n, 1, 1);
    let mut model = AttentionModel::new(variant.label(), &config, &mut rng_for(seed, "init"))?;
    let data = CircularWindows::new(unit, n);
    let spec = TrainSpec {
        optimizer: training.optimizer,
        epochs: training.epochs,
        batch_size: training.batch_size,
        seed,
        samples_per_epoch: None,
    };
    match train(&mut model, &data, &spec) {
        Ok(_) => {}
        Err(e @ Error::Diverged { .. }) => return Ok(UnitOutcome::Diverged(e.to_string())),
        Err(e) => return Err(e),
    }
    let mut window: Vec<f64> = (0..n).map(|i| data.wave[(i + m * n - n) % m]).collect();
    let mut learned = Vec::with_capacity(m);
    for t in 0..m {
        let next = match model.predict(&Tensor::matrix(n, 1, window.clone())?) {
            Ok(out) => out.data()[n - 1],
            Err(Error::NonFinite { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if next.is_nan() || next.abs() > DIVERGENCE_BOUND {
            return Ok(UnitOutcome::Diverged(format!(
                "free-running output left the bound at sample {t}"
            )));
        }
        window.remove(0);
        window.push(next);
        learned.push(next * peak);
    }
    Ok(UnitOutcome::Learned(learned))
}

/// Learns each of the `k` dominant units of `signal` with its own
/// single-head attention module and sums the learned components.
///
/// Every module is trained to predict its normalized component one step
/// ahead over circular windows. The learned component is then generated
/// free-running over the same `M` samples: the module starts from the true
/// window just before `t = 0` (taken circularly) and each prediction is fed
/// back as input. A module that diverges while training or generating
/// contributes nothing, is scored as a zero contribution and is reported
/// without stopping the others.
pub fn multi_attention_reconstruct(
    signal: &[f64],
    k: usize,
    variant: Variant,
    training: &ModuleTraining,
    root_seed: u64,
) -> Result<MultiAttentionResult> {
    if k == 0 {
        return Err(invalid("need at least one unit"));
    }
    let dec = dft(signal)?;
    let units: Vec<usize> = dec.units().into_iter().take(k).collect();
    let outcomes: Vec<(usize, Result<UnitOutcome>)> = units
        .par_iter()
        .map(|&bin| {
            let seed = derive_seed(root_seed, &format!("unit-{bin}-{}", variant.label()));
            (bin, learn_unit(&dec, bin, variant, training, seed))
        })
        .collect();
    let mut reconstruction = vec![0.0; signal.len()];
    let mut results = Vec::with_capacity(outcomes.len());
    for (bin, outcome) in outcomes {
        let wave = component_wave(&dec, bin)?;
        let (epsilon, error) = match outcome? {
            UnitOutcome::Learned(learned) => {
                reconstruction.iter_mut().zip(&learned).for_each(|(r, l)| *r += l);
                let eps = if wave.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    rel_l2(&wave, &learned)?
                };
                (eps, None)
            }
            UnitOutcome::Diverged(msg) => (1.0, Some(msg)),
        };
        results.push(UnitResult {
            bin,
            amplitude: dec.amplitudes[bin],
            period: dec.period(bin),
            input_size: module_input_size(&dec, bin),
            epsilon,
            diverged: error.is_some(),
            error,
        });
    }
    let mean_epsilon = results.iter().map(|u| u.epsilon).sum::<f64>() / results.len() as f64;
    Ok(MultiAttentionResult {
        energy: reconstruction_energy(signal, &reconstruction)?,
        truncation_energy: truncation_energy(&dec, units.len()),
        reconstruction,
        units: results,
        mean_epsilon,
    })
}
