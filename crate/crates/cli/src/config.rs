//! Experiment configuration: the TOML schema, scale defaults and the
//! resolved form every runner consumes.

use std::fmt;
use std::path::{Path, PathBuf};

use eal_core::attention::Variant;
use eal_core::dynsys::{LorenzCorpusConfig, LorenzParams, VdpCase};
use eal_core::spectral::ModuleTraining;
use eal_core::tensor::OptimizerKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SineRecon,
    SvdAnalyze,
    VdpRecon,
    Lorenz,
}

impl Experiment {
    pub fn label(self) -> &'static str {
        match self {
            Experiment::SineRecon => "sine-recon",
            Experiment::SvdAnalyze => "svd-analyze",
            Experiment::VdpRecon => "vdp-recon",
            Experiment::Lorenz => "lorenz",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseSelection {
    Periodic,
    QuasiPeriodic,
    Chaotic,
    All,
}

impl CaseSelection {
    pub fn cases(self) -> Vec<VdpCase> {
        match self {
            CaseSelection::Periodic => vec![VdpCase::Periodic],
            CaseSelection::QuasiPeriodic => vec![VdpCase::QuasiPeriodic],
            CaseSelection::Chaotic => vec![VdpCase::Chaotic],
            CaseSelection::All => VdpCase::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LorenzModel {
    EasyDense,
    EasySparse,
    #[serde(rename = "self")]
    SelfAttention,
    Lstm,
}

impl LorenzModel {
    pub const ALL: [LorenzModel; 4] = [
        LorenzModel::EasyDense,
        LorenzModel::EasySparse,
        LorenzModel::SelfAttention,
        LorenzModel::Lstm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LorenzModel::EasyDense => "easy_dense",
            LorenzModel::EasySparse => "easy_sparse",
            LorenzModel::SelfAttention => "self",
            LorenzModel::Lstm => "lstm",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            LorenzModel::EasyDense => Some(Variant::EasyDense),
            LorenzModel::EasySparse => Some(Variant::EasySparse),
            LorenzModel::SelfAttention => Some(Variant::SelfAttention),
            LorenzModel::Lstm => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

/// The file as written by a user. Every knob is optional; missing ones take
/// the scale defaults of the experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub training: TrainingBlock,
    #[serde(default)]
    pub evaluation: EvaluationBlock,
    #[serde(default)]
    pub svd: SvdBlock,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub desk_scale: Option<bool>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub transient: Option<usize>,
    pub series: Option<usize>,
    pub train_series: Option<usize>,
    pub window: Option<usize>,
    pub test_steps: Option<usize>,
    pub test_state: Option<[f64; 3]>,
    pub initial_range: Option<[f64; 2]>,
    pub standardize: Option<bool>,
    pub lorenz: Option<LorenzParams>,
    pub case: Option<CaseSelection>,
    pub stride: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub variants: Option<Vec<Variant>>,
    pub models: Option<Vec<LorenzModel>>,
    pub units: Option<usize>,
    pub target_energy: Option<f64>,
    pub heads: Option<usize>,
    pub band_l: Option<usize>,
    pub lstm_hidden: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub optimizer: Option<OptimizerName>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub samples_per_epoch: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    pub horizon: Option<usize>,
    pub anchors: Option<usize>,
    pub rollout_steps: Option<usize>,
    pub baselines: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvdBlock {
    pub checkpoint: Option<PathBuf>,
    pub train_inline: Option<bool>,
    pub pair: Option<[usize; 2]>,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub full_scale: bool,
    pub seed: Option<u64>,
    pub with_baselines: bool,
    pub out_dir: Option<PathBuf>,
    pub train_inline: bool,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineSettings {
    pub variants: Vec<Variant>,
    pub heads: usize,
    pub training: TrainingSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdSettings {
    pub checkpoint: Option<PathBuf>,
    pub train_inline: bool,
    pub pair: (usize, usize),
    pub training: TrainingSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum UnitSelection {
    Count(usize),
    Energy(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdpSettings {
    pub cases: Vec<VdpCase>,
    pub variants: Vec<Variant>,
    pub dt: f64,
    pub transient: usize,
    pub stride: usize,
    pub samples: usize,
    pub units: UnitSelection,
    pub training: ModuleTraining,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzSettings {
    pub corpus: LorenzCorpusConfig,
    pub models: Vec<LorenzModel>,
    pub band_l: usize,
    pub lstm_hidden: usize,
    pub training: TrainingSettings,
    pub horizon: usize,
    pub anchors: Option<usize>,
    pub rollout_steps: usize,
    pub baselines: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Settings {
    Sine(SineSettings),
    Svd(SvdSettings),
    Vdp(VdpSettings),
    Lorenz(LorenzSettings),
}

/// A fully resolved experiment. Its hash covers everything that can change
/// the numbers, and nothing else: the output directory is left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub desk_scale: bool,
    pub settings: Settings,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub const DEFAULT_OUT_DIR: &str = "runs";

/// Training defaults of the sine task.
pub fn sine_training() -> TrainingSettings {
    TrainingSettings {
        optimizer: OptimizerKind::sgd(1e-3, 0.98),
        epochs: 1000,
        batch_size: 8,
        samples_per_epoch: None,
    }
}

/// Lorenz training defaults at desk scale.
pub fn lorenz_desk_training() -> TrainingSettings {
    TrainingSettings {
        optimizer: OptimizerKind::adam(1e-3),
        epochs: 20,
        batch_size: 8,
        samples_per_epoch: Some(1400),
    }
}

pub fn lorenz_full_training() -> TrainingSettings {
    TrainingSettings {
        optimizer: OptimizerKind::adam(1e-3),
        epochs: 100,
        batch_size: 32,
        samples_per_epoch: None,
    }
}

fn field(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Field {
        path: path.to_string(),
        message: msg.into(),
    }
}

fn positive(path: &str, v: usize) -> CliResult<usize> {
    if v == 0 {
        return Err(field(path, "must be at least 1"));
    }
    Ok(v)
}

fn unused<T>(path: &str, v: &Option<T>, experiment: Experiment) -> CliResult<()> {
    if v.is_some() {
        return Err(field(path, format!("does not apply to the {experiment} experiment")));
    }
    Ok(())
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    fn training(&self, defaults: TrainingSettings) -> CliResult<TrainingSettings> {
        let t = &self.training;
        let (default_name, default_lr, default_momentum) = match defaults.optimizer {
            OptimizerKind::SgdMomentum {
                learning_rate,
                momentum,
            } => (OptimizerName::Sgd, learning_rate, momentum),
            OptimizerKind::Adam { learning_rate, .. } => (OptimizerName::Adam, learning_rate, 0.98),
        };
        let name = t.optimizer.unwrap_or(default_name);
        let lr = t.learning_rate.unwrap_or(default_lr);
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(field("training.learning_rate", "must be a finite non-negative number"));
        }
        let optimizer = match name {
            OptimizerName::Sgd => {
                let m = t.momentum.unwrap_or(default_momentum);
                if !(0.0..1.0).contains(&m) {
                    return Err(field("training.momentum", "must lie in [0, 1)"));
                }
                OptimizerKind::sgd(lr, m)
            }
            OptimizerName::Adam => {
                if t.momentum.is_some() {
                    return Err(field("training.momentum", "only applies to the sgd optimizer"));
                }
                OptimizerKind::adam(lr)
            }
        };
        let samples_per_epoch = match t.samples_per_epoch {
            Some(n) => Some(positive("training.samples_per_epoch", n)?),
            None => defaults.samples_per_epoch,
        };
        Ok(TrainingSettings {
            optimizer,
            epochs: positive("training.epochs", t.epochs.unwrap_or(defaults.epochs))?,
            batch_size: positive("training.batch_size", t.batch_size.unwrap_or(defaults.batch_size))?,
            samples_per_epoch,
        })
    }

    fn variants(&self, default: &[Variant]) -> CliResult<Vec<Variant>> {
        let v = self.model.variants.clone().unwrap_or_else(|| default.to_vec());
        if v.is_empty() {
            return Err(field("model.variants", "must name at least one variant"));
        }
        for (i, a) in v.iter().enumerate() {
            if v[..i].contains(a) {
                return Err(field("model.variants", format!("{} listed twice", a.label())));
            }
        }
        Ok(v)
    }

    /// Applies overrides and scale defaults, and validates every field.
    pub fn resolve(&self, over: &Overrides) -> CliResult<ExperimentConfig> {
        let experiment = over
            .experiment
            .or(self.experiment)
            .ok_or_else(|| field("experiment", "missing; set it in the file or on the command line"))?;
        if let (Some(a), Some(b)) = (over.experiment, self.experiment) {
            if a != b {
                return Err(field(
                    "experiment",
                    format!("file declares {b} but the command asked for {a}"),
                ));
            }
        }
        let desk_scale = if over.full_scale {
            false
        } else {
            self.dataset.desk_scale.unwrap_or(true)
        };
        let seed = over.seed.or(self.seed).unwrap_or(0);
        let out_dir = over
            .out_dir
            .clone()
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let settings = match experiment {
            Experiment::SineRecon => Settings::Sine(self.resolve_sine(experiment)?),
            Experiment::SvdAnalyze => Settings::Svd(self.resolve_svd(experiment, over)?),
            Experiment::VdpRecon => Settings::Vdp(self.resolve_vdp(experiment, desk_scale)?),
            Experiment::Lorenz => Settings::Lorenz(self.resolve_lorenz(experiment, desk_scale, over)?),
        };
        Ok(ExperimentConfig {
            experiment,
            seed,
            desk_scale,
            settings,
            out_dir,
        })
    }

    fn reject_series_keys(&self, e: Experiment) -> CliResult<()> {
        let d = &self.dataset;
        unused("dataset.dt", &d.dt, e)?;
        unused("dataset.steps", &d.steps, e)?;
        unused("dataset.transient", &d.transient, e)?;
        unused("dataset.series", &d.series, e)?;
        unused("dataset.train_series", &d.train_series, e)?;
        unused("dataset.window", &d.window, e)?;
        unused("dataset.test_steps", &d.test_steps, e)?;
        unused("dataset.test_state", &d.test_state, e)?;
        unused("dataset.initial_range", &d.initial_range, e)?;
        unused("dataset.standardize", &d.standardize, e)?;
        unused("dataset.lorenz", &d.lorenz, e)?;
        unused("dataset.case", &d.case, e)?;
        unused("dataset.stride", &d.stride, e)?;
        unused("dataset.samples", &d.samples, e)
    }

    fn reject_model_keys(&self, e: Experiment, allow_variants: bool) -> CliResult<()> {
        let m = &self.model;
        if !allow_variants {
            unused("model.variants", &m.variants, e)?;
        }
        unused("model.models", &m.models, e)?;
        unused("model.units", &m.units, e)?;
        unused("model.target_energy", &m.target_energy, e)?;
        unused("model.band_l", &m.band_l, e)?;
        unused("model.lstm_hidden", &m.lstm_hidden, e)
    }

    fn reject_evaluation(&self, e: Experiment) -> CliResult<()> {
        let v = &self.evaluation;
        unused("evaluation.horizon", &v.horizon, e)?;
        unused("evaluation.anchors", &v.anchors, e)?;
        unused("evaluation.rollout_steps", &v.rollout_steps, e)?;
        unused("evaluation.baselines", &v.baselines, e)
    }

    fn reject_svd(&self, e: Experiment) -> CliResult<()> {
        unused("svd.checkpoint", &self.svd.checkpoint, e)?;
        unused("svd.train_inline", &self.svd.train_inline, e)?;
        unused("svd.pair", &self.svd.pair, e)
    }

    fn resolve_sine(&self, e: Experiment) -> CliResult<SineSettings> {
        self.reject_series_keys(e)?;
        self.reject_model_keys(e, true)?;
        self.reject_evaluation(e)?;
        self.reject_svd(e)?;
        let variants = self.variants(&[Variant::EasyDense, Variant::SelfAttention])?;
        if variants.contains(&Variant::EasySparse) {
            return Err(field(
                "model.variants",
                "easy_sparse needs a band width and is not offered here",
            ));
        }
        let heads = positive("model.heads", self.model.heads.unwrap_or(1))?;
        if 3 % heads != 0 {
            return Err(field("model.heads", "must divide the feature width 3"));
        }
        Ok(SineSettings {
            variants,
            heads,
            training: self.training(sine_training())?,
        })
    }

    fn resolve_svd(&self, e: Experiment, over: &Overrides) -> CliResult<SvdSettings> {
        self.reject_series_keys(e)?;
        self.reject_model_keys(e, false)?;
        unused("model.heads", &self.model.heads, e)?;
        self.reject_evaluation(e)?;
        let pair = self.svd.pair.unwrap_or([1, 0]);
        if pair[0] >= 3 || pair[1] >= 3 {
            return Err(field("svd.pair", "column indices must be 0, 1 or 2"));
        }
        let checkpoint = over.checkpoint.clone().or_else(|| self.svd.checkpoint.clone());
        let train_inline = over.train_inline || self.svd.train_inline.unwrap_or(false);
        if checkpoint.is_none() && !train_inline {
            return Err(CliError::MissingCheckpoint);
        }
        if checkpoint.is_some() && train_inline {
            return Err(field("svd.train_inline", "conflicts with an explicit checkpoint"));
        }
        Ok(SvdSettings {
            checkpoint,
            train_inline,
            pair: (pair[0], pair[1]),
            training: self.training(sine_training())?,
        })
    }

    fn resolve_vdp(&self, e: Experiment, desk: bool) -> CliResult<VdpSettings> {
        let d = &self.dataset;
        for (path, v) in [
            ("dataset.series", d.series),
            ("dataset.train_series", d.train_series),
            ("dataset.window", d.window),
            ("dataset.test_steps", d.test_steps),
            ("dataset.steps", d.steps),
        ] {
            unused(path, &v, e)?;
        }
        unused("dataset.test_state", &d.test_state, e)?;
        unused("dataset.initial_range", &d.initial_range, e)?;
        unused("dataset.standardize", &d.standardize, e)?;
        unused("dataset.lorenz", &d.lorenz, e)?;
        let m = &self.model;
        unused("model.models", &m.models, e)?;
        unused("model.band_l", &m.band_l, e)?;
        unused("model.lstm_hidden", &m.lstm_hidden, e)?;
        unused("model.heads", &m.heads, e)?;
        unused("training.samples_per_epoch", &self.training.samples_per_epoch, e)?;
        self.reject_evaluation(e)?;
        self.reject_svd(e)?;
        let variants = self.variants(&[Variant::EasyDense, Variant::SelfAttention])?;
        if variants.contains(&Variant::EasySparse) {
            return Err(field(
                "model.variants",
                "easy_sparse is not offered for per-frequency modules",
            ));
        }
        let dt = d.dt.unwrap_or(0.01);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(field("dataset.dt", "must be positive"));
        }
        let samples = d.samples.unwrap_or(1024);
        if samples < 4 {
            return Err(field("dataset.samples", "must be at least 4"));
        }
        let units = match (m.units, m.target_energy) {
            (Some(_), Some(_)) => {
                return Err(field(
                    "model.target_energy",
                    "set either model.units or model.target_energy",
                ));
            }
            (Some(k), None) => UnitSelection::Count(positive("model.units", k)?),
            (None, Some(t)) => {
                if !(t > 0.0 && t <= 100.0) {
                    return Err(field("model.target_energy", "must lie in (0, 100] percent"));
                }
                UnitSelection::Energy(t)
            }
            (None, None) if desk => UnitSelection::Count(10),
            (None, None) => UnitSelection::Energy(90.0),
        };
        let defaults = TrainingSettings {
            epochs: if desk { 200 } else { 1000 },
            ..sine_training()
        };
        let t = self.training(defaults)?;
        Ok(VdpSettings {
            cases: d.case.unwrap_or(CaseSelection::Periodic).cases(),
            variants,
            dt,
            transient: d.transient.unwrap_or(10_000),
            stride: positive("dataset.stride", d.stride.unwrap_or(10))?,
            samples,
            units,
            training: ModuleTraining {
                optimizer: t.optimizer,
                epochs: t.epochs,
                batch_size: t.batch_size,
            },
        })
    }

    fn resolve_lorenz(&self, e: Experiment, desk: bool, over: &Overrides) -> CliResult<LorenzSettings> {
        let d = &self.dataset;
        unused("dataset.case", &d.case, e)?;
        unused("dataset.stride", &d.stride, e)?;
        unused("dataset.samples", &d.samples, e)?;
        unused("model.variants", &self.model.variants, e)?;
        unused("model.units", &self.model.units, e)?;
        unused("model.target_energy", &self.model.target_energy, e)?;
        unused("model.heads", &self.model.heads, e)?;
        self.reject_svd(e)?;
        let mut corpus = if desk {
            LorenzCorpusConfig::desk()
        } else {
            LorenzCorpusConfig::full()
        };
        if let Some(v) = d.lorenz {
            corpus.params = v;
        }
        if let Some(v) = d.dt {
            corpus.dt = v;
        }
        if let Some(v) = d.steps {
            corpus.steps = v;
        }
        if let Some(v) = d.transient {
            corpus.transient = v;
        }
        if let Some(v) = d.series {
            corpus.series = v;
        }
        if let Some(v) = d.train_series {
            corpus.train_series = v;
        }
        if let Some(v) = d.window {
            corpus.window = v;
        }
        if let Some(v) = d.test_steps {
            corpus.test_steps = v;
        }
        if let Some(v) = d.test_state {
            corpus.test_state = v;
        }
        if let Some([lo, hi]) = d.initial_range {
            corpus.initial_low = lo;
            corpus.initial_high = hi;
        }
        if let Some(v) = d.standardize {
            corpus.standardize = v;
        }
        corpus.validate().map_err(|e| field("dataset", e.to_string()))?;
        let models = self.model.models.clone().unwrap_or_else(|| LorenzModel::ALL.to_vec());
        if models.is_empty() {
            return Err(field("model.models", "must name at least one model"));
        }
        for (i, a) in models.iter().enumerate() {
            if models[..i].contains(a) {
                return Err(field("model.models", format!("{} listed twice", a.label())));
            }
        }
        let band_l = self.model.band_l.unwrap_or(0);
        if band_l >= corpus.window {
            return Err(field("model.band_l", "must be smaller than the window"));
        }
        let horizon = positive("evaluation.horizon", self.evaluation.horizon.unwrap_or(512))?;
        if corpus.test_steps < corpus.window + horizon {
            return Err(field("evaluation.horizon", "test series is too short for one segment"));
        }
        let anchors = match self.evaluation.anchors {
            Some(n) => Some(positive("evaluation.anchors", n)?),
            None if desk => Some(10),
            None => None,
        };
        let defaults = if desk {
            lorenz_desk_training()
        } else {
            lorenz_full_training()
        };
        Ok(LorenzSettings {
            corpus,
            models,
            band_l,
            lstm_hidden: positive("model.lstm_hidden", self.model.lstm_hidden.unwrap_or(128))?,
            training: self.training(defaults)?,
            horizon,
            anchors,
            rollout_steps: positive(
                "evaluation.rollout_steps",
                self.evaluation.rollout_steps.unwrap_or(4000),
            )?,
            baselines: over.with_baselines || self.evaluation.baselines.unwrap_or(false),
        })
    }
}

impl ExperimentConfig {
    /// Canonical JSON of the resolved settings.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("resolved config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `out_dir/<experiment>-<hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("{}-{}", self.experiment, self.hash()))
    }
}
