use eal_core::attention::{AttentionConfig, AttentionLayer, Variant};
use eal_core::dynsys::{sine_dataset, SINE_PHASES};
use eal_core::models::{AttentionModel, SequenceModel};
use eal_core::seed::rng_for;
use eal_core::spectral::{svd_analyze, MatrixFamily, SvdReport};
use eal_core::tensor::decode_checkpoint;

use crate::config::{ExperimentConfig, SvdSettings};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, RunDir};
use crate::row;
use crate::svg::{Panel, Series};

use super::sine::train_sine_module;

/// The self-attention module under analysis, from a checkpoint or trained
/// on the spot.
pub fn load_module(config: &ExperimentConfig, settings: &SvdSettings) -> CliResult<AttentionModel> {
    let attention = AttentionConfig::new(Variant::SelfAttention, 3, 3, 1);
    match &settings.checkpoint {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            let stored = decode_checkpoint(&bytes)?;
            let mut model = AttentionModel::new("self", &attention, &mut rng_for(0, "unused"))?;
            model.params_mut().load_from(&stored)?;
            Ok(model)
        }
        None => Ok(train_sine_module(Variant::SelfAttention, 1, &settings.training, config.seed)?.0),
    }
}

pub fn run(config: &ExperimentConfig, settings: &SvdSettings, dir: &mut RunDir) -> CliResult<SvdReport> {
    let model = load_module(config, settings)?;
    let AttentionLayer::SelfAttention(layer) = &model.layer else {
        unreachable!("module is built as self attention")
    };
    let data = sine_dataset();
    let report = svd_analyze(&data.inputs, layer, model.params(), settings.pair)?;

    let mut header = vec!["sample"];
    let names = [
        "s1", "s2", "s3", "u1_0", "u1_1", "u1_2", "v1_0", "v1_1", "v1_2", "diag_0", "diag_1", "diag_2",
    ];
    header.extend(names);
    header.extend(["reconstruction_error", "error"]);
    for (family, samples) in &report.families {
        let rows: Vec<Vec<Cell>> = samples
            .iter()
            .map(|s| {
                let mut cells = row![s.sample];
                let pad = |v: &[f64], k: usize| v.get(k).copied();
                for k in 0..3 {
                    cells.push(pad(&s.singular_values, k).into());
                }
                for k in 0..3 {
                    cells.push(pad(&s.u1, k).into());
                }
                for k in 0..3 {
                    cells.push(pad(&s.v1, k).into());
                }
                for k in 0..3 {
                    cells.push(pad(&s.diagonal, k).into());
                }
                cells.push(s.reconstruction_error.into());
                cells.push(s.error.clone().unwrap_or_default().into());
                cells
            })
            .collect();
        dir.csv(&format!("{}.csv", family.label()), &header, &rows)?;
    }

    let scatter = report
        .families
        .iter()
        .map(|(family, samples)| {
            let cloud = |pick: fn(&eal_core::spectral::SampleSvd) -> &Vec<f64>| {
                samples
                    .iter()
                    .flat_map(|s| {
                        pick(s)
                            .iter()
                            .zip(SINE_PHASES)
                            .map(|(&u, phi)| (phi, u))
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>()
            };
            Panel::new(family_title(*family), "phase", "singular vector entry")
                .with(Series::points("u1", cloud(|s| &s.u1)))
                .with(Series::points("v1", cloud(|s| &s.v1)))
        })
        .collect();
    dir.svg("singular_vectors.svg", "Leading singular vectors", 3, scatter)?;

    let diagonals = report
        .families
        .iter()
        .map(|(family, samples)| {
            let mut panel = Panel::new(family_title(*family), "sample", "diagonal entry");
            for k in 0..3 {
                let pts = samples
                    .iter()
                    .map(|s| (s.sample as f64, s.diagonal.get(k).copied().unwrap_or(f64::NAN)))
                    .collect();
                panel = panel.with(Series::line(format!("entry {k}"), pts));
            }
            panel
        })
        .collect();
    dir.svg("diagonals.svg", "Diagonal trajectories", 3, diagonals)?;
    dir.json("report.json", &report)?;
    Ok(report)
}

fn family_title(f: MatrixFamily) -> &'static str {
    match f {
        MatrixFamily::SelfCombination => "self-combination",
        MatrixFamily::Weighted => "weighted",
        MatrixFamily::Score => "softmax score",
    }
}
