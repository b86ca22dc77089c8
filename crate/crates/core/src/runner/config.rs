use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::algorithms::{HyperParams, PolicyKind};
use crate::cluster::{ClusterPreset, CommModel, JitterMode, WorkerProfile, DEFAULT_K_MAX};
use crate::error::{Error, Result};
use crate::model::ModelKind;

/// Which metric decides convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvergenceMetric {
    /// Full training loss at or below the threshold.
    #[default]
    TrainLoss,
    /// Squared full-gradient norm at or below the threshold.
    GradNormSq,
    /// Accuracy on the held-out split at or above the threshold.
    TestAccuracy,
}

impl fmt::Display for ConvergenceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvergenceMetric::TrainLoss => "train_loss",
            ConvergenceMetric::GradNormSq => "grad_norm_sq",
            ConvergenceMetric::TestAccuracy => "test_accuracy",
        })
    }
}

impl FromStr for ConvergenceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_loss" => Ok(ConvergenceMetric::TrainLoss),
            "grad_norm_sq" => Ok(ConvergenceMetric::GradNormSq),
            "test_accuracy" => Ok(ConvergenceMetric::TestAccuracy),
            other => Err(Error::config(format!(
                "unknown convergence metric '{other}' (expected train_loss|grad_norm_sq|test_accuracy)"
            ))),
        }
    }
}

/// Synthetic dataset and model shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub model: ModelKind,
    /// Feature dimension `d`.
    pub features: usize,
    /// Sample count `D`, before any hold-out split.
    pub samples: usize,
    pub label_noise: f64,
    pub feature_scale: f64,
    /// Hidden width for the MLP.
    pub hidden: usize,
    /// Trailing fraction of samples held out for accuracy.
    pub holdout_fraction: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            model: ModelKind::LogisticRegression,
            features: 10,
            samples: 2000,
            label_noise: 0.1,
            feature_scale: 6.0,
            hidden: 16,
            holdout_fraction: 0.0,
        }
    }
}

/// Settings for the bound report attached to ABS runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheorySettings {
    pub enabled: bool,
    pub lipschitz_probes: usize,
    pub lipschitz_radius: f64,
    pub sigma_samples: usize,
    pub oracle_iters: usize,
    pub oracle_step: f64,
}

impl Default for TheorySettings {
    fn default() -> Self {
        TheorySettings {
            enabled: true,
            lipschitz_probes: 200,
            lipschitz_radius: 1.0,
            sigma_samples: 4000,
            oracle_iters: 100_000,
            oracle_step: 0.5,
        }
    }
}

/// Worker timing: a named preset or explicit profiles.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterSpec {
    Preset { preset: ClusterPreset, base_batch_time: f64 },
    Explicit(Vec<WorkerProfile>),
}

impl ClusterSpec {
    pub fn profiles(&self) -> Result<Vec<WorkerProfile>> {
        match self {
            ClusterSpec::Preset { preset, base_batch_time } => preset.profiles(*base_batch_time),
            ClusterSpec::Explicit(p) => Ok(p.clone()),
        }
    }

    /// Row label for comparison tables.
    pub fn label(&self) -> String {
        match self {
            ClusterSpec::Preset { preset, .. } => preset.label().to_string(),
            ClusterSpec::Explicit(p) => format!("Custom ({} workers)", p.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub policy: PolicyKind,
    pub cluster: ClusterSpec,
    pub comm: CommModel,
    pub hyper: HyperParams,
    pub data: DataSpec,
    pub seed: u64,
    pub threshold: f64,
    pub metric: ConvergenceMetric,
    /// Emit every `cadence`-th record.
    pub cadence: usize,
    /// Iterations between DBS re-balancing; `None` means one pass over the
    /// training set.
    pub dbs_epoch_iters: Option<usize>,
    pub k_max: usize,
    pub jitter: JitterMode,
    /// Stop once simulated time passes this many seconds.
    pub time_budget: Option<f64>,
    pub stop_at_threshold: bool,
    pub theory: TheorySettings,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `policy` on `preset`.
    pub fn new(policy: PolicyKind, preset: ClusterPreset, seed: u64) -> Self {
        ExperimentConfig {
            policy,
            cluster: ClusterSpec::Preset {
                preset,
                base_batch_time: DEFAULT_BASE_BATCH_TIME,
            },
            comm: CommModel::new(DEFAULT_COMM_ALPHA, 0.0).expect("default comm model is valid"),
            hyper: HyperParams::default(),
            data: DataSpec::default(),
            seed,
            threshold: DEFAULT_THRESHOLD,
            metric: ConvergenceMetric::TrainLoss,
            cadence: 1,
            dbs_epoch_iters: None,
            k_max: DEFAULT_K_MAX,
            jitter: JitterMode::PerBatch,
            time_budget: None,
            stop_at_threshold: false,
            theory: TheorySettings::default(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(message) => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        raw.into_config()
    }

    /// Iterations per DBS epoch for a training set of `train_len` samples.
    pub fn dbs_epoch_len(&self, train_len: usize, workers: usize) -> usize {
        self.dbs_epoch_iters
            .unwrap_or_else(|| train_len.div_ceil(workers * self.hyper.reference_batch))
            .max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate().map_err(|e| Error::config(e.to_string()))?;
        let profiles = self.cluster.profiles().map_err(|e| Error::config(e.to_string()))?;
        if profiles.is_empty() {
            return Err(Error::config("cluster has no workers"));
        }
        for p in &profiles {
            p.validate().map_err(|e| Error::config(e.to_string()))?;
        }
        self.comm.validate().map_err(|e| Error::config(e.to_string()))?;
        let d = &self.data;
        if d.features == 0 || d.samples == 0 {
            return Err(Error::config("features and samples must be >= 1"));
        }
        if !(0.0..=1.0).contains(&d.label_noise) {
            return Err(Error::config("label_noise must lie in [0, 1]"));
        }
        if !(d.feature_scale > 0.0 && d.feature_scale.is_finite()) {
            return Err(Error::config("feature_scale must be positive"));
        }
        if d.model == ModelKind::TwoLayerMlp && d.hidden == 0 {
            return Err(Error::config("hidden must be >= 1 for the mlp model"));
        }
        if !(0.0..1.0).contains(&d.holdout_fraction) {
            return Err(Error::config("holdout_fraction must lie in [0, 1)"));
        }
        if self.metric == ConvergenceMetric::TestAccuracy && d.holdout_fraction == 0.0 {
            return Err(Error::config("metric test_accuracy needs holdout_fraction > 0"));
        }
        if self.threshold.is_nan() {
            return Err(Error::config("threshold must be a number"));
        }
        if self.cadence == 0 {
            return Err(Error::config("cadence must be >= 1"));
        }
        if self.dbs_epoch_iters == Some(0) {
            return Err(Error::config("dbs_epoch_iters must be >= 1"));
        }
        if self.k_max == 0 {
            return Err(Error::config("k_max must be >= 1"));
        }
        if let Some(b) = self.time_budget {
            if !(b > 0.0) {
                return Err(Error::config("time_budget must be positive"));
            }
        }
        let t = &self.theory;
        if t.enabled && (t.lipschitz_probes == 0 || t.sigma_samples < 2 || !(t.lipschitz_radius > 0.0) || !(t.oracle_step > 0.0)) {
            return Err(Error::config("theory settings need probes >= 1, sigma_samples >= 2 and positive radius/step"));
        }
        Ok(())
    }
}

pub const DEFAULT_BASE_BATCH_TIME: f64 = 0.1;
pub const DEFAULT_COMM_ALPHA: f64 = 1.5;
pub const DEFAULT_THRESHOLD: f64 = 0.442;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    policy: String,
    seed: u64,
    cluster: Option<String>,
    base_batch_time: Option<f64>,
    worker_base_times: Option<Vec<f64>>,
    worker_static_factors: Option<Vec<f64>>,
    worker_dynamic_ranges: Option<Vec<f64>>,
    comm_alpha: Option<f64>,
    comm_beta: Option<f64>,
    reference_batch: Option<usize>,
    learning_rate: Option<f64>,
    compensation: Option<f64>,
    iterations: Option<usize>,
    staleness: Option<usize>,
    model: Option<String>,
    features: Option<usize>,
    samples: Option<usize>,
    label_noise: Option<f64>,
    feature_scale: Option<f64>,
    hidden: Option<usize>,
    holdout_fraction: Option<f64>,
    threshold: Option<f64>,
    metric: Option<String>,
    cadence: Option<usize>,
    dbs_epoch_iters: Option<usize>,
    k_max: Option<usize>,
    jitter: Option<String>,
    time_budget: Option<f64>,
    stop_at_threshold: Option<bool>,
    theory_report: Option<bool>,
    lipschitz_probes: Option<usize>,
    lipschitz_radius: Option<f64>,
    sigma_samples: Option<usize>,
    oracle_iters: Option<usize>,
    oracle_step: Option<f64>,
}

impl RawConfig {
    fn into_config(self) -> Result<ExperimentConfig> {
        let policy: PolicyKind = self.policy.parse()?;
        let explicit = self.worker_base_times.is_some()
            || self.worker_static_factors.is_some()
            || self.worker_dynamic_ranges.is_some();
        let cluster = match (&self.cluster, explicit) {
            (Some(_), true) => {
                return Err(Error::config("give either 'cluster' or explicit worker_* arrays, not both"));
            }
            (None, false) => return Err(Error::config("missing 'cluster' preset or worker_* arrays")),
            (Some(name), false) => ClusterSpec::Preset {
                preset: name.parse()?,
                base_batch_time: self.base_batch_time.unwrap_or(DEFAULT_BASE_BATCH_TIME),
            },
            (None, true) => {
                if self.base_batch_time.is_some() {
                    return Err(Error::config("base_batch_time applies to presets; use worker_base_times"));
                }
                let base = self
                    .worker_base_times
                    .ok_or_else(|| Error::config("explicit workers need worker_base_times"))?;
                let n = base.len();
                let statics = self.worker_static_factors.unwrap_or_else(|| vec![0.0; n]);
                let dynamics = self.worker_dynamic_ranges.unwrap_or_else(|| vec![0.0; n]);
                if statics.len() != n || dynamics.len() != n {
                    return Err(Error::config("worker_* arrays must have equal lengths"));
                }
                let profiles = (0..n)
                    .map(|i| WorkerProfile::new(base[i], statics[i], dynamics[i]))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::config(e.to_string()))?;
                ClusterSpec::Explicit(profiles)
            }
        };
        let comm = CommModel {
            alpha: self.comm_alpha.unwrap_or(DEFAULT_COMM_ALPHA),
            beta: self.comm_beta.unwrap_or(0.0),
        };
        let defaults = HyperParams::default();
        let hyper = HyperParams {
            reference_batch: self.reference_batch.unwrap_or(defaults.reference_batch),
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            compensation: self.compensation.unwrap_or(defaults.compensation),
            iterations: self.iterations.unwrap_or(defaults.iterations),
            staleness: self.staleness.unwrap_or(defaults.staleness),
        };
        let dd = DataSpec::default();
        let data = DataSpec {
            model: match &self.model {
                Some(m) => m.parse()?,
                None => dd.model,
            },
            features: self.features.unwrap_or(dd.features),
            samples: self.samples.unwrap_or(dd.samples),
            label_noise: self.label_noise.unwrap_or(dd.label_noise),
            feature_scale: self.feature_scale.unwrap_or(dd.feature_scale),
            hidden: self.hidden.unwrap_or(dd.hidden),
            holdout_fraction: self.holdout_fraction.unwrap_or(dd.holdout_fraction),
        };
        let td = TheorySettings::default();
        let theory = TheorySettings {
            enabled: self.theory_report.unwrap_or(td.enabled),
            lipschitz_probes: self.lipschitz_probes.unwrap_or(td.lipschitz_probes),
            lipschitz_radius: self.lipschitz_radius.unwrap_or(td.lipschitz_radius),
            sigma_samples: self.sigma_samples.unwrap_or(td.sigma_samples),
            oracle_iters: self.oracle_iters.unwrap_or(td.oracle_iters),
            oracle_step: self.oracle_step.unwrap_or(td.oracle_step),
        };
        let cfg = ExperimentConfig {
            policy,
            cluster,
            comm,
            hyper,
            data,
            seed: self.seed,
            threshold: self.threshold.unwrap_or(DEFAULT_THRESHOLD),
            metric: match &self.metric {
                Some(m) => m.parse()?,
                None => ConvergenceMetric::TrainLoss,
            },
            cadence: self.cadence.unwrap_or(1),
            dbs_epoch_iters: self.dbs_epoch_iters,
            k_max: self.k_max.unwrap_or(DEFAULT_K_MAX),
            jitter: match &self.jitter {
                Some(j) => j.parse()?,
                None => JitterMode::PerBatch,
            },
            time_budget: self.time_budget,
            stop_at_threshold: self.stop_at_threshold.unwrap_or(false),
            theory,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
