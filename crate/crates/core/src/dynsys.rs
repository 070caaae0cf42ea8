//! Ground-truth data: RK4 integration, the Lorenz and forced Van der Pol
//! systems, the phase-shifted sine stream and time-delay windowing.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(rhs: &F, t: f64, state: &[f64], dt: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let d = state.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    rhs(t, state, &mut k1);
    for i in 0..d {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    rhs(t + 0.5 * dt, &tmp, &mut k2);
    for i in 0..d {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    rhs(t + 0.5 * dt, &tmp, &mut k3);
    for i in 0..d {
        tmp[i] = state[i] + dt * k3[i];
    }
    rhs(t + dt, &tmp, &mut k4);
    (0..d)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates `steps` RK4 steps; the trajectory holds `steps + 1` rows.
pub fn rk4_integrate<F>(rhs: F, state0: &[f64], t0: f64, dt: f64, steps: usize) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if state0.is_empty() {
        return Err(invalid("empty initial state"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {dt}")));
    }
    if state0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration { step: 0 });
    }
    let d = state0.len();
    let mut states = Vec::with_capacity((steps + 1) * d);
    states.extend_from_slice(state0);
    let mut current = state0.to_vec();
    for step in 1..=steps {
        let t = t0 + (step - 1) as f64 * dt;
        current = rk4_step(&rhs, t, &current, dt);
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step });
        }
        states.extend_from_slice(&current);
    }
    let times = (0..=steps).map(|i| t0 + i as f64 * dt).collect();
    Ok(Trajectory {
        times,
        states,
        columns: (0..d).map(|i| format!("x{i}")).collect(),
        system: "custom".into(),
        params: BTreeMap::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

pub fn lorenz_rhs(state: [f64; 3], p: &LorenzParams) -> [f64; 3] {
    let [x, y, z] = state;
    [p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta * z]
}

pub fn integrate_lorenz(params: &LorenzParams, state0: [f64; 3], dt: f64, steps: usize) -> Result<Trajectory> {
    let p = *params;
    let mut traj = rk4_integrate(
        move |_, s, out| out.copy_from_slice(&lorenz_rhs([s[0], s[1], s[2]], &p)),
        &state0,
        0.0,
        dt,
        steps,
    )?;
    traj.system = "lorenz".into();
    traj.columns = vec!["x".into(), "y".into(), "z".into()];
    traj.params = BTreeMap::from([
        ("sigma".into(), p.sigma),
        ("rho".into(), p.rho),
        ("beta".into(), p.beta),
    ]);
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdpParams {
    pub a: f64,
    pub b: f64,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VdpCase {
    Periodic,
    QuasiPeriodic,
    Chaotic,
}

impl VdpCase {
    pub const ALL: [VdpCase; 3] = [VdpCase::Periodic, VdpCase::QuasiPeriodic, VdpCase::Chaotic];

    pub fn params(self) -> VdpParams {
        match self {
            VdpCase::Periodic => VdpParams {
                a: 5.0,
                b: 40.0,
                omega: 7.0,
            },
            VdpCase::QuasiPeriodic => VdpParams {
                a: 5.0,
                b: 15.0,
                omega: 7.0,
            },
            VdpCase::Chaotic => VdpParams {
                a: 5.0,
                b: 3.0,
                omega: 1.788,
            },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VdpCase::Periodic => "periodic",
            VdpCase::QuasiPeriodic => "quasi-periodic",
            VdpCase::Chaotic => "chaotic",
        }
    }
}

pub fn vdp_rhs(state: [f64; 2], t: f64, p: &VdpParams) -> [f64; 2] {
    let [x, y] = state;
    [y, -x + p.a * (1.0 - x * x) * y + p.b * (p.omega * t).cos()]
}

pub fn integrate_vdp(params: &VdpParams, state0: [f64; 2], dt: f64, steps: usize) -> Result<Trajectory> {
    let p = *params;
    let mut traj = rk4_integrate(
        move |t, s, out| out.copy_from_slice(&vdp_rhs([s[0], s[1]], t, &p)),
        &state0,
        0.0,
        dt,
        steps,
    )?;
    traj.system = "van_der_pol".into();
    traj.columns = vec!["x".into(), "y".into()];
    traj.params = BTreeMap::from([("a".into(), p.a), ("b".into(), p.b), ("omega".into(), p.omega)]);
    Ok(traj)
}

/// A uniformly sampled multivariate time series, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub columns: Vec<String>,
    pub system: String,
    pub params: BTreeMap<String, f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<f64>, columns: Vec<String>) -> Result<Self> {
        let traj = Self {
            times,
            states,
            columns,
            system: "custom".into(),
            params: BTreeMap::new(),
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.times.is_empty() {
            return Err(invalid("trajectory needs at least one row and one column"));
        }
        if self.states.len() != self.times.len() * d {
            return Err(invalid(format!(
                "{} state values do not fill {} rows of width {d}",
                self.states.len(),
                self.times.len()
            )));
        }
        if self.states.iter().chain(&self.times).any(|v| !v.is_finite()) {
            return Err(invalid("trajectory contains non-finite values"));
        }
        if self.times.len() > 1 {
            let dt = self.times[1] - self.times[0];
            if dt <= 0.0 {
                return Err(invalid("times must be strictly increasing"));
            }
            for (i, w) in self.times.windows(2).enumerate() {
                if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
                    return Err(invalid(format!("times are not uniformly spaced at row {}", i + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn dt(&self) -> Option<f64> {
        (self.times.len() > 1).then(|| self.times[1] - self.times[0])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.states[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.iter().skip(j).step_by(self.dim()).copied().collect()
    }

    /// Drops the first `rows` rows.
    pub fn skip(&self, rows: usize) -> Result<Trajectory> {
        if rows >= self.len() {
            return Err(invalid(format!("cannot drop {rows} of {} rows", self.len())));
        }
        let d = self.dim();
        Ok(Trajectory {
            times: self.times[rows..].to_vec(),
            states: self.states[rows * d..].to_vec(),
            ..self.clone()
        })
    }

    /// Writes `t` followed by the state columns, 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut rec = vec![fmt_f64(*t)];
            rec.extend(self.row(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.get(0).map(str::trim) != Some("t") || header.len() < 2 {
            return Err(Error::Csv("header must be `t` followed by at least one column".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != columns.len() + 1 {
                return Err(Error::Csv(format!("row {} has {} fields", line + 1, rec.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Csv(format!("row {} field {j}: not a number", line + 1)))?;
                if j == 0 {
                    times.push(v);
                } else {
                    states.push(v);
                }
            }
        }
        let traj = Trajectory {
            times,
            states,
            columns,
            system: "imported".into(),
            params: BTreeMap::new(),
        };
        traj.validate().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(traj)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Phase shifts of the sine stream: cumulative sums `0, 0+1, 0+1+2`.
pub const SINE_PHASES: [f64; 3] = [0.0, 1.0, 3.0];

/// Length of the sine time axis, `t = 0, 1, …, 50`.
pub const SINE_STEPS: usize = 51;

/// The phase-shifted sine stream with one column per phase, rows `t = 0..=50`.
pub fn sine_series() -> Tensor {
    Tensor::from_fn(&[SINE_STEPS, 3], |k| {
        let (t, i) = (k / 3, k % 3);
        (t as f64 * std::f64::consts::FRAC_PI_2 + SINE_PHASES[i]).sin()
    })
}

/// Supervised pairs of the sine task: the 3×3 window with rows
/// `t−2, t−1, t` maps to the window one step later.
#[derive(Clone, Debug)]
pub struct SineDataset {
    pub series: Tensor,
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

pub fn sine_dataset() -> SineDataset {
    let series = sine_series();
    let window = |start: usize| Tensor::from_fn(&[3, 3], |k| series.at(start + k / 3, k % 3));
    let count = SINE_STEPS - 3;
    SineDataset {
        inputs: (0..count).map(window).collect(),
        targets: (1..=count).map(window).collect(),
        series,
    }
}

/// Source of supervised `(input, target)` pairs.
pub trait Dataset: Sync {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> (Tensor, Tensor);
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for SineDataset {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn sample(&self, index: usize) -> (Tensor, Tensor) {
        (self.inputs[index].clone(), self.targets[index].clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// What a window is asked to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    /// The single row after the window, shaped `1 × d`.
    NextStep,
    /// The window shifted forward by one row, shaped `p × d`.
    ShiftedWindow,
}

/// Sliding windows (stride 1) over one or more series. Windows never cross
/// a series boundary.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    series: Vec<Arc<Vec<f64>>>,
    index: Vec<(u32, u32)>,
    p: usize,
    d: usize,
    target: TargetKind,
    pub split: Split,
}

impl WindowedDataset {
    pub fn new(series: &[Trajectory], p: usize, split: Split) -> Result<Self> {
        Self::with_target(series, p, split, TargetKind::NextStep)
    }

    pub fn with_target(series: &[Trajectory], p: usize, split: Split, target: TargetKind) -> Result<Self> {
        let d = series
            .first()
            .map(Trajectory::dim)
            .ok_or_else(|| invalid("no series to window"))?;
        if p == 0 {
            return Err(invalid("window length must be positive"));
        }
        let mut stored = Vec::with_capacity(series.len());
        let mut index = Vec::new();
        for (s, traj) in series.iter().enumerate() {
            if traj.dim() != d {
                return Err(invalid("series have different widths"));
            }
            if p >= traj.len() {
                return Err(invalid(format!(
                    "window length {p} needs a series longer than {} rows",
                    traj.len()
                )));
            }
            index.extend((0..traj.len() - p).map(|start| (s as u32, start as u32)));
            stored.push(Arc::new(traj.states.clone()));
        }
        Ok(Self {
            series: stored,
            index,
            p,
            d,
            target,
            split,
        })
    }

    pub fn window_len(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `(series, start row)` of each window.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.index.iter().map(|&(s, i)| (s as usize, i as usize))
    }

    pub fn input(&self, i: usize) -> Tensor {
        let (s, start) = self.index[i];
        let data = &self.series[s as usize][start as usize * self.d..(start as usize + self.p) * self.d];
        Tensor::matrix(self.p, self.d, data.to_vec()).expect("window shape")
    }

    pub fn target(&self, i: usize) -> Tensor {
        let (s, start) = self.index[i];
        let (first, rows) = match self.target {
            TargetKind::NextStep => (start as usize + self.p, 1),
            TargetKind::ShiftedWindow => (start as usize + 1, self.p),
        };
        let data = &self.series[s as usize][first * self.d..(first + rows) * self.d];
        Tensor::matrix(rows, self.d, data.to_vec()).expect("target shape")
    }
}

impl Dataset for WindowedDataset {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn sample(&self, index: usize) -> (Tensor, Tensor) {
        (self.input(index), self.target(index))
    }
}

/// Per-feature affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(series: &[Trajectory]) -> Result<Self> {
        let d = series
            .first()
            .map(Trajectory::dim)
            .ok_or_else(|| invalid("no series to fit"))?;
        let mut count = 0usize;
        let mut mean = vec![0.0; d];
        for traj in series {
            for i in 0..traj.len() {
                for (m, v) in mean.iter_mut().zip(traj.row(i)) {
                    *m += v;
                }
            }
            count += traj.len();
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; d];
        for traj in series {
            for i in 0..traj.len() {
                for ((s, v), m) in var.iter_mut().zip(traj.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / count as f64).sqrt()).collect();
        if std.contains(&0.0) {
            return Err(invalid("a feature is constant; cannot standardize"));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        let mut out = traj.clone();
        out.states.chunks_mut(traj.dim()).for_each(|r| self.apply_row(r));
        out
    }

    pub fn invert(&self, traj: &Trajectory) -> Trajectory {
        let mut out = traj.clone();
        out.states.chunks_mut(traj.dim()).for_each(|r| self.invert_row(r));
        out
    }
}

/// Protocol knobs of the Lorenz corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorenzCorpusConfig {
    #[serde(default)]
    pub params: LorenzParams,
    pub series: usize,
    /// Integration steps kept per series, after the transient.
    pub steps: usize,
    pub dt: f64,
    pub transient: usize,
    pub window: usize,
    /// Number of leading series used for training; the rest validate.
    pub train_series: usize,
    pub initial_low: f64,
    pub initial_high: f64,
    pub test_state: [f64; 3],
    pub test_steps: usize,
    pub standardize: bool,
}

impl LorenzCorpusConfig {
    pub const FULL_STEPS: usize = 140_000;
    pub const DESK_STEPS: usize = 20_000;

    pub fn desk() -> Self {
        Self {
            params: LorenzParams::default(),
            series: 10,
            steps: Self::DESK_STEPS,
            dt: 0.01,
            transient: 1000,
            window: 64,
            train_series: 8,
            initial_low: 0.0,
            initial_high: 5.0,
            test_state: [6.0, 6.0, 6.0],
            test_steps: Self::DESK_STEPS,
            standardize: true,
        }
    }

    pub fn full() -> Self {
        Self {
            steps: Self::FULL_STEPS,
            test_steps: Self::FULL_STEPS,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.series < 2 || self.train_series == 0 || self.train_series >= self.series {
            return Err(invalid("need at least one training and one validation series"));
        }
        if self.window == 0 || self.steps <= self.window || self.test_steps <= self.window {
            return Err(invalid("series must be longer than the window"));
        }
        if self.dt.is_nan()
            || self.dt <= 0.0
            || self.initial_high.partial_cmp(&self.initial_low) != Some(Ordering::Greater)
        {
            return Err(invalid("invalid step size or initial-state range"));
        }
        Ok(())
    }
}

/// Generated Lorenz data, already standardized when requested.
#[derive(Clone, Debug)]
pub struct LorenzCorpus {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    /// Raw (physical-unit) test series.
    pub test: Trajectory,
    pub standardizer: Standardizer,
    pub initial_states: Vec<[f64; 3]>,
}

impl LorenzCorpus {
    /// The test series in model units.
    pub fn test_normalized(&self) -> Trajectory {
        self.standardizer.apply(&self.test)
    }
}

pub fn lorenz_corpus(config: &LorenzCorpusConfig, root_seed: u64) -> Result<LorenzCorpus> {
    config.validate()?;
    let mut rng = rng_for(root_seed, "lorenz-initial-states");
    let initial_states: Vec<[f64; 3]> = (0..config.series)
        .map(|_| std::array::from_fn(|_| rng.gen_range(config.initial_low..config.initial_high)))
        .collect();
    let generate = |state: [f64; 3], steps: usize| {
        integrate_lorenz(&config.params, state, config.dt, steps + config.transient)?.skip(config.transient)
    };
    let raw: Vec<Trajectory> = initial_states
        .iter()
        .map(|s| generate(*s, config.steps - 1))
        .collect::<Result<_>>()?;
    let test = generate(config.test_state, config.test_steps - 1)?;
    let (train_raw, val_raw) = raw.split_at(config.train_series);
    let standardizer = if config.standardize {
        Standardizer::fit(train_raw)?
    } else {
        Standardizer::identity(3)
    };
    let norm = |set: &[Trajectory]| set.iter().map(|t| standardizer.apply(t)).collect::<Vec<_>>();
    Ok(LorenzCorpus {
        train: WindowedDataset::new(&norm(train_raw), config.window, Split::Train)?,
        val: WindowedDataset::new(&norm(val_raw), config.window, Split::Val)?,
        test,
        standardizer,
        initial_states,
    })
}
