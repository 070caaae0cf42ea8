use eal_core::attention::Variant;
use eal_core::dynsys::{integrate_vdp, VdpCase};
use eal_core::seed::derive_seed;
use eal_core::spectral::{dft, multi_attention_reconstruct, select_top_k, MultiAttentionResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, UnitSelection, VdpSettings};
use crate::error::CliResult;
use crate::output::{Cell, RunDir};
use crate::row;
use crate::svg::{Panel, Series};

use super::Failure;

/// Observed `x` of a forced Van der Pol run: integrate from `(1, 0)`, drop
/// the transient, keep every `stride`-th sample.
pub fn vdp_signal(case: VdpCase, settings: &VdpSettings) -> eal_core::Result<Vec<f64>> {
    let steps = settings.transient + settings.stride * settings.samples;
    let traj = integrate_vdp(&case.params(), [1.0, 0.0], settings.dt, steps)?;
    Ok(traj
        .column(0)
        .into_iter()
        .skip(settings.transient)
        .step_by(settings.stride)
        .take(settings.samples)
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct VdpRun {
    pub case: VdpCase,
    pub variant: Variant,
    pub units: usize,
    pub result: MultiAttentionResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct VdpOutcome {
    pub runs: Vec<VdpRun>,
    pub failures: Vec<Failure>,
}

impl VdpOutcome {
    pub fn run(&self, case: VdpCase, variant: Variant) -> Option<&VdpRun> {
        self.runs.iter().find(|r| r.case == case && r.variant == variant)
    }
}

struct CaseData {
    case: VdpCase,
    signal: Vec<f64>,
    units: usize,
}

pub fn run(config: &ExperimentConfig, settings: &VdpSettings, dir: &mut RunDir) -> CliResult<VdpOutcome> {
    let mut cases = Vec::new();
    for &case in &settings.cases {
        let signal = vdp_signal(case, settings)?;
        let dec = dft(&signal)?;
        let available = dec.units().len();
        let units = match settings.units {
            UnitSelection::Count(k) => k.min(available),
            UnitSelection::Energy(target) => select_top_k(&dec, target)?,
        };
        let mut spectrum = Vec::new();
        for (bin, amp) in dec.amplitudes.iter().enumerate().take(signal.len() / 2 + 1) {
            spectrum.push(row![bin, dec.frequencies[bin], *amp, dec.top_k.contains(&bin)]);
        }
        dir.csv(
            &format!("spectrum_{}.csv", case.label()),
            &["bin", "frequency", "amplitude", "dominant"],
            &spectrum,
        )?;
        cases.push(CaseData { case, signal, units });
    }

    let jobs: Vec<(usize, Variant)> = (0..cases.len())
        .flat_map(|c| settings.variants.iter().map(move |&v| (c, v)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(c, v)| {
            let data = &cases[c];
            let seed = derive_seed(config.seed, &format!("vdp-{}", data.case.label()));
            (
                c,
                v,
                multi_attention_reconstruct(&data.signal, data.units, v, &settings.training, seed),
            )
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (c, variant, result) in results {
        let case = cases[c].case;
        let name = format!("{}/{}", case.label(), variant.label());
        match result {
            Ok(result) => {
                for u in &result.units {
                    if let Some(msg) = u.error.as_deref().filter(|m| m.starts_with("training diverged")) {
                        failures.push(Failure {
                            name: format!("{name}/bin{}", u.bin),
                            message: msg.to_string(),
                        });
                    }
                }
                runs.push(VdpRun {
                    case,
                    variant,
                    units: cases[c].units,
                    result,
                });
            }
            Err(e) => failures.push(Failure::new(name, e)),
        }
    }

    let table: Vec<Vec<Cell>> = runs
        .iter()
        .map(|r| {
            row![
                r.case.label(),
                r.variant.label(),
                r.units,
                r.result.mean_epsilon * 100.0,
                r.result.energy,
                r.result.truncation_energy,
                r.result.diverged_units(),
            ]
        })
        .collect();
    dir.csv(
        "table.csv",
        &[
            "case",
            "variant",
            "units",
            "mean_epsilon_percent",
            "energy_percent",
            "truncation_energy_percent",
            "diverged_units",
        ],
        &table,
    )?;

    let mut unit_rows = Vec::new();
    for r in &runs {
        for u in &r.result.units {
            unit_rows.push(row![
                r.case.label(),
                r.variant.label(),
                u.bin,
                u.amplitude,
                u.period,
                u.input_size,
                u.epsilon * 100.0,
                u.diverged,
            ]);
        }
    }
    dir.csv(
        "units.csv",
        &[
            "case",
            "variant",
            "bin",
            "amplitude",
            "period",
            "input_size",
            "epsilon_percent",
            "diverged",
        ],
        &unit_rows,
    )?;

    let mut panels = Vec::new();
    for data in &cases {
        let case_runs: Vec<&VdpRun> = runs.iter().filter(|r| r.case == data.case).collect();
        let mut header = vec!["sample", "signal"];
        let labels: Vec<&str> = case_runs.iter().map(|r| r.variant.label()).collect();
        header.extend(&labels);
        let rows: Vec<Vec<Cell>> = (0..data.signal.len())
            .map(|t| {
                let mut cells = row![t, data.signal[t]];
                cells.extend(case_runs.iter().map(|r| Cell::Float(r.result.reconstruction[t])));
                cells
            })
            .collect();
        dir.csv(&format!("reconstruction_{}.csv", data.case.label()), &header, &rows)?;
        let shown = data.signal.len().min(256);
        let mut panel = Panel::new(format!("{} (K = {})", data.case.label(), data.units), "sample", "x")
            .with(Series::line("signal", index_points(&data.signal[..shown])));
        for r in &case_runs {
            panel = panel.with(Series::dashed(
                r.variant.label(),
                index_points(&r.result.reconstruction[..shown]),
            ));
        }
        panels.push(panel);
    }
    dir.svg("overlay.svg", "Van der Pol reconstruction", 1, panels)?;

    let outcome = VdpOutcome { runs, failures };
    dir.json("metrics.json", &outcome)?;
    Ok(outcome)
}

fn index_points(ys: &[f64]) -> Vec<(f64, f64)> {
    ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect()
}
