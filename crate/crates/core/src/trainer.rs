//! Training loops, forecasting evaluation and the metrics record.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dynsys::{Dataset, Standardizer, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::metrics::rel_l2;
use crate::models::SequenceModel;
use crate::seed::rng_for;
use crate::tensor::{Optimizer, OptimizerKind, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Draw this many samples per epoch (without replacement) instead of
    /// the full dataset.
    #[serde(default)]
    pub samples_per_epoch: Option<usize>,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be at least 1"));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(invalid("samples_per_epoch must be positive"));
        }
        if self.optimizer.learning_rate().is_nan() || self.optimizer.learning_rate() < 0.0 {
            return Err(invalid("learning rate must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
    pub steps: u64,
    /// Wall-clock seconds spent in the epoch loop.
    pub tc_seconds: f64,
}

impl TrainOutcome {
    /// Fraction of epoch-to-epoch transitions where the loss did not rise.
    pub fn non_increasing_fraction(&self) -> f64 {
        if self.loss_curve.len() < 2 {
            return 1.0;
        }
        let ok = self.loss_curve.windows(2).filter(|w| w[1] <= w[0]).count();
        ok as f64 / (self.loss_curve.len() - 1) as f64
    }
}

/// Mean-squared-error training with seeded shuffling.
///
/// Each batch is one tape: every sample's loss is recorded and the batch
/// loss is their mean. A non-finite loss aborts with the epoch and batch
/// coordinates.
pub fn train(model: &mut dyn SequenceModel, data: &dyn Dataset, spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut optimizer = Optimizer::new(spec.optimizer, model.params());
    let mut rng = rng_for(spec.seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let per_epoch = spec.samples_per_epoch.map_or(data.len(), |n| n.min(data.len()));
    let mut loss_curve = Vec::with_capacity(spec.epochs);
    let start = Instant::now();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order[..per_epoch].chunks(spec.batch_size).enumerate() {
            let diverged = || Error::Diverged { epoch, batch };
            let grads = {
                let mut tape = Tape::with_params(model.params());
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let (input, target) = data.sample(i);
                    let x = tape.constant(input)?;
                    let y = model.forward(&mut tape, x).map_err(|e| match e {
                        Error::NonFinite { .. } => diverged(),
                        other => other,
                    })?;
                    let t = tape.constant(target)?;
                    losses.push(tape.mse_loss(y, t).map_err(|_| diverged())?);
                }
                let mut sum = losses[0];
                for &l in &losses[1..] {
                    sum = tape.add(sum, l).map_err(|_| diverged())?;
                }
                let loss = tape.scale(sum, 1.0 / chunk.len() as f64).map_err(|_| diverged())?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(diverged());
                }
                total += value * chunk.len() as f64;
                tape.backward(loss).map_err(|_| diverged())?
            };
            optimizer.step(model.params_mut(), &grads)?;
            if model.params().iter().any(|(_, _, t)| !t.is_finite()) {
                return Err(diverged());
            }
        }
        loss_curve.push(total / per_epoch as f64);
    }
    Ok(TrainOutcome {
        loss_curve,
        steps: optimizer.step_count(),
        tc_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean MSE of a model over a dataset, without training.
pub fn evaluate_loss(model: &dyn SequenceModel, data: &dyn Dataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let (input, target) = data.sample(i);
        let y = model.predict(&input)?;
        let se: f64 = y.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += se / target.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Anything that maps a `p × d` window to the next `d`-dimensional state.
pub trait Predictor: Sync {
    fn predict_next(&self, window: &Tensor) -> Result<Vec<f64>>;
}

/// Adapts a trained model to [`Predictor`].
pub struct ModelPredictor<'a>(pub &'a dyn SequenceModel);

impl Predictor for ModelPredictor<'_> {
    fn predict_next(&self, window: &Tensor) -> Result<Vec<f64>> {
        Ok(self.0.predict(window)?.into_data())
    }
}

/// Repeats the last observed state.
pub struct Persistence;

impl Predictor for Persistence {
    fn predict_next(&self, window: &Tensor) -> Result<Vec<f64>> {
        Ok(window.row(window.rows() - 1).to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Generated states in physical units, one row per step.
    pub trajectory: Trajectory,
    /// Set when a non-finite prediction stopped the rollout early.
    pub truncated: bool,
}

/// Autoregressive generation: each prediction is appended to the window and
/// the oldest row dropped. `seed` is in model units; the output is mapped
/// back through `scaler`.
pub fn rollout(
    predictor: &dyn Predictor,
    seed: &Tensor,
    steps: usize,
    scaler: &Standardizer,
    dt: f64,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(invalid("rollout needs at least one step"));
    }
    let (p, d) = (seed.rows(), seed.cols());
    let mut window = seed.data().to_vec();
    let mut states = Vec::with_capacity(steps * d);
    let mut truncated = false;
    for _ in 0..steps {
        let next = match predictor.predict_next(&Tensor::matrix(p, d, window.clone())?) {
            Ok(v) if v.len() == d && v.iter().all(|x| x.is_finite()) => v,
            Ok(v) if v.len() != d => {
                return Err(invalid(format!("predictor returned {} values, expected {d}", v.len())))
            }
            Ok(_) | Err(Error::NonFinite { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        window.drain(..d);
        window.extend_from_slice(&next);
        let mut phys = next;
        scaler.invert_row(&mut phys);
        states.extend(phys);
    }
    let rows = states.len() / d;
    let trajectory = Trajectory {
        times: (1..=rows).map(|i| i as f64 * dt).collect(),
        states,
        columns: (0..d)
            .map(|j| ["x", "y", "z"].get(j).map_or(format!("x{j}"), |s| s.to_string()))
            .collect(),
        system: "rollout".into(),
        params: Default::default(),
    };
    Ok(Rollout { trajectory, truncated })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    /// Mean relative l2 error over anchors, as a fraction.
    pub epsilon: f64,
    pub per_anchor: Vec<f64>,
    /// First predicted row of each segment.
    pub anchors: Vec<usize>,
}

/// Multi-anchor forecast error.
///
/// Anchors sit at `p, p + horizon, p + 2·horizon, …` of the test series, so
/// segments do not overlap. From each anchor the predictor runs `horizon`
/// steps from the `p` true rows before it; the error of a segment is the
/// relative l2 norm over the stacked states in physical units. A rollout
/// that stops early is padded with its last finite state.
pub fn evaluate_interval(
    predictor: &dyn Predictor,
    test: &Trajectory,
    scaler: &Standardizer,
    p: usize,
    horizon: usize,
    max_anchors: Option<usize>,
) -> Result<IntervalReport> {
    if horizon == 0 || p == 0 {
        return Err(invalid("window and horizon must be positive"));
    }
    if test.len() < p + horizon {
        return Err(invalid(format!(
            "test series of {} rows is shorter than window {p} plus horizon {horizon}",
            test.len()
        )));
    }
    let d = test.dim();
    let normalized = scaler.apply(test);
    let count = ((test.len() - p) / horizon).min(max_anchors.unwrap_or(usize::MAX));
    let anchors: Vec<usize> = (0..count).map(|j| p + j * horizon).collect();
    let dt = test.dt().unwrap_or(1.0);
    let mut per_anchor = Vec::with_capacity(anchors.len());
    for &a in &anchors {
        let seed = Tensor::matrix(p, d, normalized.states[(a - p) * d..a * d].to_vec())?;
        let run = rollout(predictor, &seed, horizon, scaler, dt)?;
        let mut predicted = run.trajectory.states;
        let fill = if predicted.is_empty() {
            test.row(a - 1).to_vec()
        } else {
            predicted[predicted.len() - d..].to_vec()
        };
        while predicted.len() < horizon * d {
            predicted.extend_from_slice(&fill);
        }
        let truth = &test.states[a * d..(a + horizon) * d];
        per_anchor.push(rel_l2(truth, &predicted)?);
    }
    let epsilon = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;
    Ok(IntervalReport {
        epsilon,
        per_anchor,
        anchors,
    })
}

/// Counts trainable scalars by walking the registered tensors and checks
/// the total against the model's closed-form formula.
pub fn audit_params(model: &dyn SequenceModel) -> Result<usize> {
    let registered = model.params().iter().map(|(_, _, t)| t.len()).sum::<usize>();
    let formula = model.formula_param_count();
    if registered != formula {
        return Err(Error::Audit {
            model: model.name().to_string(),
            formula,
            registered,
        });
    }
    Ok(registered)
}

/// One row of an experiment's results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub params: usize,
    /// Relative l2 error in percent.
    pub epsilon_percent: Option<f64>,
    /// Reconstruction energy in percent.
    pub energy_percent: Option<f64>,
    pub tc_seconds: f64,
    pub attention_flops: Option<u64>,
    pub forward_macs: Option<u64>,
    pub loss_curve: Vec<f64>,
}

impl MetricsReport {
    pub fn for_model(model: &dyn SequenceModel) -> Result<Self> {
        Ok(Self {
            model: model.name().to_string(),
            params: audit_params(model)?,
            epsilon_percent: None,
            energy_percent: None,
            tc_seconds: 0.0,
            attention_flops: model.attention_flops(),
            forward_macs: Some(model.forward_macs()),
            loss_curve: Vec::new(),
        })
    }
}
