use eal_core::attention::{AttentionConfig, Variant};
use eal_core::dynsys::{sine_dataset, SineDataset, SINE_PHASES};
use eal_core::metrics::rel_l2;
use eal_core::models::{AttentionModel, SequenceModel};
use eal_core::seed::{derive_seed, rng_for};
use eal_core::tensor::encode_checkpoint;
use eal_core::trainer::{train, MetricsReport, TrainSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, SineSettings, TrainingSettings};
use crate::error::CliResult;
use crate::output::{Cell, RunDir};
use crate::row;
use crate::svg::{Panel, Series};

use super::Failure;

#[derive(Clone, Debug, Serialize)]
pub struct SineRun {
    pub metrics: MetricsReport,
    /// Predictions for every sample, stacked in sample order.
    pub predictions: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SineOutcome {
    pub runs: Vec<SineRun>,
    pub failures: Vec<Failure>,
}

impl SineOutcome {
    pub fn run(&self, variant: Variant) -> Option<&SineRun> {
        self.runs.iter().find(|r| r.metrics.model == variant.label())
    }
}

/// Builds and trains one module on the sine task.
pub fn train_sine_module(
    variant: Variant,
    heads: usize,
    training: &TrainingSettings,
    seed: u64,
) -> eal_core::Result<(AttentionModel, MetricsReport)> {
    let data = sine_dataset();
    let root = derive_seed(seed, &format!("sine-{}", variant.label()));
    let config = AttentionConfig::new(variant, 3, 3, heads);
    let mut model = AttentionModel::new(variant.label(), &config, &mut rng_for(root, "init"))?;
    let spec = TrainSpec {
        optimizer: training.optimizer,
        epochs: training.epochs,
        batch_size: training.batch_size,
        seed: root,
        samples_per_epoch: training.samples_per_epoch,
    };
    let outcome = train(&mut model, &data, &spec)?;
    let mut metrics = MetricsReport::for_model(&model)?;
    let predictions = predict_all(&model, &data)?;
    let truth: Vec<f64> = data.targets.iter().flat_map(|t| t.data().to_vec()).collect();
    metrics.epsilon_percent = Some(rel_l2(&truth, &predictions)? * 100.0);
    metrics.tc_seconds = outcome.tc_seconds;
    metrics.loss_curve = outcome.loss_curve;
    Ok((model, metrics))
}

fn predict_all(model: &AttentionModel, data: &SineDataset) -> eal_core::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.inputs.len() * 9);
    for x in &data.inputs {
        out.extend_from_slice(model.predict(x)?.data());
    }
    Ok(out)
}

pub fn run(config: &ExperimentConfig, settings: &SineSettings, dir: &mut RunDir) -> CliResult<SineOutcome> {
    let results: Vec<(Variant, eal_core::Result<(AttentionModel, MetricsReport)>)> = settings
        .variants
        .par_iter()
        .map(|&v| (v, train_sine_module(v, settings.heads, &settings.training, config.seed)))
        .collect();
    let data = sine_dataset();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (variant, result) in results {
        match result {
            Ok((model, metrics)) => {
                dir.bytes(&format!("{}.ckpt", variant.label()), &encode_checkpoint(model.params()))?;
                let predictions = predict_all(&model, &data)?;
                runs.push(SineRun { metrics, predictions });
            }
            Err(e) => failures.push(Failure::new(variant.label(), e)),
        }
    }

    let table: Vec<Vec<Cell>> = runs
        .iter()
        .map(|r| {
            let m = &r.metrics;
            row![
                m.model.as_str(),
                m.params,
                m.epsilon_percent,
                m.attention_flops,
                m.forward_macs
            ]
        })
        .collect();
    dir.csv(
        "table.csv",
        &["model", "params", "epsilon_percent", "attention_flops", "forward_macs"],
        &table,
    )?;

    let mut losses = Vec::new();
    for r in &runs {
        for (epoch, l) in r.metrics.loss_curve.iter().enumerate() {
            losses.push(row![r.metrics.model.as_str(), epoch, *l]);
        }
    }
    dir.csv("loss.csv", &["model", "epoch", "loss"], &losses)?;

    // The newest row of each predicted window continues the series.
    let mut recon = Vec::new();
    let steps = data.inputs.len();
    for i in 0..steps {
        for (c, phase) in SINE_PHASES.iter().enumerate() {
            let truth = data.targets[i].at(2, c);
            let mut cells = row![i + 3, *phase, truth];
            for r in &runs {
                cells.push(Cell::Float(r.predictions[i * 9 + 6 + c]));
            }
            recon.push(cells);
        }
    }
    let mut header = vec!["step", "phase", "truth"];
    let names: Vec<String> = runs.iter().map(|r| r.metrics.model.clone()).collect();
    header.extend(names.iter().map(String::as_str));
    dir.csv("reconstruction.csv", &header, &recon)?;

    let panels = SINE_PHASES
        .iter()
        .enumerate()
        .map(|(c, phase)| {
            let truth: Vec<(f64, f64)> = (0..steps).map(|i| ((i + 3) as f64, data.targets[i].at(2, c))).collect();
            let mut panel = Panel::new(format!("phase {phase}"), "step", "value").with(Series::line("truth", truth));
            for r in &runs {
                let pts = (0..steps)
                    .map(|i| ((i + 3) as f64, r.predictions[i * 9 + 6 + c]))
                    .collect();
                panel = panel.with(Series::dashed(r.metrics.model.clone(), pts));
            }
            panel
        })
        .collect();
    dir.svg("overlay.svg", "Sine reconstruction", 3, panels)?;

    let outcome = SineOutcome { runs, failures };
    dir.json("metrics.json", &outcome)?;
    Ok(outcome)
}
