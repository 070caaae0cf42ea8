use eal_core::dynsys::{lorenz_corpus, LorenzCorpus};
use eal_core::models::{Lstm, LstmConfig, SequenceModel, Transformer, TransformerConfig};
use eal_core::seed::{derive_seed, rng_for};
use eal_core::tensor::{encode_checkpoint, Tensor};
use eal_core::trainer::{
    evaluate_interval, rollout, train, IntervalReport, MetricsReport, ModelPredictor, Persistence, Predictor, TrainSpec,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, LorenzModel, LorenzSettings};
use crate::error::CliResult;
use crate::output::{Cell, RunDir};
use crate::row;
use crate::svg::{plane_projections, Panel, Series, Style};

use super::Failure;

#[derive(Clone, Debug, Serialize)]
pub struct LorenzRun {
    pub metrics: MetricsReport,
    pub interval: IntervalReport,
    /// Generated states, row-major `rollout_steps × 3`, physical units.
    pub rollout: Vec<f64>,
    pub rollout_truncated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LorenzOutcome {
    pub runs: Vec<LorenzRun>,
    pub baseline: Option<LorenzRun>,
    pub failures: Vec<Failure>,
}

impl LorenzOutcome {
    pub fn run(&self, model: LorenzModel) -> Option<&LorenzRun> {
        self.runs.iter().find(|r| r.metrics.model == model.label())
    }

    pub fn epsilon(&self, model: LorenzModel) -> Option<f64> {
        self.run(model).and_then(|r| r.metrics.epsilon_percent)
    }
}

pub fn build_model(
    kind: LorenzModel,
    settings: &LorenzSettings,
    seed: u64,
) -> eal_core::Result<Box<dyn SequenceModel>> {
    let c = &settings.corpus;
    let mut rng = rng_for(seed, "init");
    Ok(match kind.variant() {
        Some(variant) => {
            let mut cfg = TransformerConfig::lorenz(variant);
            cfg.p = c.window;
            cfg.band_l = settings.band_l;
            Box::new(Transformer::new(kind.label(), &cfg, &mut rng)?)
        }
        None => {
            let cfg = LstmConfig {
                p: c.window,
                d: 3,
                hidden: settings.lstm_hidden,
            };
            Box::new(Lstm::new(kind.label(), &cfg, &mut rng)?)
        }
    })
}

fn evaluate(
    name: &str,
    predictor: &dyn Predictor,
    corpus: &LorenzCorpus,
    settings: &LorenzSettings,
    mut metrics: MetricsReport,
) -> eal_core::Result<LorenzRun> {
    let p = settings.corpus.window;
    let interval = evaluate_interval(
        predictor,
        &corpus.test,
        &corpus.standardizer,
        p,
        settings.horizon,
        settings.anchors,
    )?;
    let normalized = corpus.test_normalized();
    let seed = Tensor::matrix(p, 3, normalized.states[..p * 3].to_vec())?;
    let dt = settings.corpus.dt;
    let gen = rollout(predictor, &seed, settings.rollout_steps, &corpus.standardizer, dt)?;
    metrics.model = name.to_string();
    metrics.epsilon_percent = Some(interval.epsilon * 100.0);
    Ok(LorenzRun {
        metrics,
        interval,
        rollout: gen.trajectory.states,
        rollout_truncated: gen.truncated,
    })
}

fn train_and_evaluate(
    kind: LorenzModel,
    corpus: &LorenzCorpus,
    settings: &LorenzSettings,
    root: u64,
) -> eal_core::Result<(LorenzRun, Vec<u8>)> {
    let seed = derive_seed(root, kind.label());
    let mut model = build_model(kind, settings, seed)?;
    let t = &settings.training;
    let spec = TrainSpec {
        optimizer: t.optimizer,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed,
        samples_per_epoch: t.samples_per_epoch,
    };
    let outcome = train(model.as_mut(), &corpus.train, &spec)?;
    let mut metrics = MetricsReport::for_model(model.as_ref())?;
    metrics.tc_seconds = outcome.tc_seconds;
    metrics.loss_curve = outcome.loss_curve;
    let run = evaluate(kind.label(), &ModelPredictor(model.as_ref()), corpus, settings, metrics)?;
    Ok((run, encode_checkpoint(model.params())))
}

pub fn run(config: &ExperimentConfig, settings: &LorenzSettings, dir: &mut RunDir) -> CliResult<LorenzOutcome> {
    let corpus = lorenz_corpus(&settings.corpus, config.seed)?;
    let results: Vec<_> = settings
        .models
        .par_iter()
        .map(|&kind| (kind, train_and_evaluate(kind, &corpus, settings, config.seed)))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (kind, result) in results {
        match result {
            Ok((run, ckpt)) => {
                dir.bytes(&format!("{}.ckpt", kind.label()), &ckpt)?;
                runs.push(run);
            }
            Err(e) => failures.push(Failure::new(kind.label(), e)),
        }
    }
    let baseline = if settings.baselines {
        let metrics = MetricsReport {
            model: "persistence".into(),
            params: 0,
            epsilon_percent: None,
            energy_percent: None,
            tc_seconds: 0.0,
            attention_flops: None,
            forward_macs: None,
            loss_curve: Vec::new(),
        };
        Some(evaluate("persistence", &Persistence, &corpus, settings, metrics)?)
    } else {
        None
    };

    let self_flops = runs
        .iter()
        .find(|r| r.metrics.model == LorenzModel::SelfAttention.label())
        .and_then(|r| r.metrics.attention_flops)
        .or_else(|| {
            build_model(LorenzModel::SelfAttention, settings, 0)
                .ok()
                .and_then(|m| m.attention_flops())
        });
    let table: Vec<Vec<Cell>> = runs
        .iter()
        .chain(&baseline)
        .map(|r| {
            let m = &r.metrics;
            let ratio = match (m.attention_flops, self_flops) {
                (Some(a), Some(s)) if s > 0 => Some(a as f64 / s as f64),
                _ => None,
            };
            row![
                m.model.as_str(),
                m.params,
                m.epsilon_percent,
                m.attention_flops,
                ratio,
                m.forward_macs,
                m.loss_curve.last().copied(),
                r.rollout_truncated,
            ]
        })
        .collect();
    dir.csv(
        "table.csv",
        &[
            "model",
            "params",
            "epsilon_percent",
            "attention_flops",
            "flops_ratio_to_self",
            "forward_macs",
            "final_train_loss",
            "rollout_truncated",
        ],
        &table,
    )?;

    let mut anchors = Vec::new();
    for r in runs.iter().chain(&baseline) {
        for (a, e) in r.interval.anchors.iter().zip(&r.interval.per_anchor) {
            anchors.push(row![r.metrics.model.as_str(), *a, *e * 100.0]);
        }
    }
    dir.csv("anchors.csv", &["model", "anchor", "epsilon_percent"], &anchors)?;

    let mut losses = Vec::new();
    for r in &runs {
        for (epoch, l) in r.metrics.loss_curve.iter().enumerate() {
            losses.push(row![r.metrics.model.as_str(), epoch, *l]);
        }
    }
    dir.csv("loss.csv", &["model", "epoch", "loss"], &losses)?;

    let steps = settings.rollout_steps.min(corpus.test.len() - settings.corpus.window);
    let p = settings.corpus.window;
    let truth = &corpus.test.states[p * 3..(p + steps) * 3];
    for r in runs.iter().chain(&baseline) {
        let name = &r.metrics.model;
        let rows: Vec<Vec<Cell>> = (0..steps)
            .map(|i| {
                let pred = |k: usize| r.rollout.get(i * 3 + k).copied();
                row![
                    i + 1,
                    truth[i * 3],
                    truth[i * 3 + 1],
                    truth[i * 3 + 2],
                    pred(0),
                    pred(1),
                    pred(2)
                ]
            })
            .collect();
        dir.csv(
            &format!("rollout_{name}.csv"),
            &["step", "x_true", "y_true", "z_true", "x_pred", "y_pred", "z_pred"],
            &rows,
        )?;
        let mut panels: Vec<Panel> = Vec::new();
        for (k, axis) in ["x", "y", "z"].iter().enumerate() {
            let t: Vec<(f64, f64)> = (0..steps).map(|i| ((i + 1) as f64, truth[i * 3 + k])).collect();
            let g: Vec<(f64, f64)> = (0..r.rollout.len() / 3)
                .take(steps)
                .map(|i| ((i + 1) as f64, r.rollout[i * 3 + k]))
                .collect();
            panels.push(
                Panel::new(format!("{axis}(t)"), "step", *axis)
                    .with(Series::line("truth", t))
                    .with(Series::dashed(name.clone(), g)),
            );
        }
        let mut planes = plane_projections("truth", truth, ["x", "y", "z"], Style::Line);
        let generated = plane_projections(name, &r.rollout, ["x", "y", "z"], Style::Dashed);
        for (panel, g) in planes.iter_mut().zip(generated) {
            panel.series.extend(g.series);
        }
        panels.extend(planes);
        dir.svg(
            &format!("rollout_{name}.svg"),
            &format!("Lorenz rollout: {name}"),
            3,
            panels,
        )?;
    }

    let outcome = LorenzOutcome {
        runs,
        baseline,
        failures,
    };
    dir.json("metrics.json", &outcome)?;
    Ok(outcome)
}
