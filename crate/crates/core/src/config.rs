//! Sampler configuration, validation and the phase of a given epoch.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a sample within a dataset, `0 <= index < N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub usize);

impl SampleId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for SampleId {
    fn from(index: usize) -> Self {
        SampleId(index)
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of epochs between full-dataset metric refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReevalInterval {
    Never,
    Every(usize),
}

impl fmt::Display for ReevalInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReevalInterval::Never => f.write_str("never"),
            ReevalInterval::Every(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for ReevalInterval {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("never") {
            return Ok(ReevalInterval::Never);
        }
        s.parse::<usize>()
            .map(ReevalInterval::Every)
            .map_err(|_| format!("expected a positive integer or \"never\", got {s:?}"))
    }
}

/// How importance scores evolve once warm-up is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    /// Scores computed at the end of warm-up are never touched again.
    Frozen,
    /// Scores of the samples trained in an epoch are refreshed after that epoch.
    PartialChosen,
    /// Every sample is forwarded and rescored every K-th sampled epoch.
    FullEveryK,
}

impl fmt::Display for UpdatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdatePolicy::Frozen => "frozen",
            UpdatePolicy::PartialChosen => "partial",
            UpdatePolicy::FullEveryK => "full",
        })
    }
}

impl FromStr for UpdatePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "frozen" => Ok(UpdatePolicy::Frozen),
            "partial" | "partial_chosen" | "partialchosen" => Ok(UpdatePolicy::PartialChosen),
            "full" | "full_every_k" | "fulleveryk" => Ok(UpdatePolicy::FullEveryK),
            other => Err(format!("unknown update policy {other:?} (frozen, partial, full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    TopK,
    StochasticWithoutReplacement,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::TopK => "topk",
            SelectionMode::StochasticWithoutReplacement => "stochastic",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "topk" | "top_k" | "top" => Ok(SelectionMode::TopK),
            "stochastic" | "stochastic_without_replacement" => {
                Ok(SelectionMode::StochasticWithoutReplacement)
            }
            other => Err(format!("unknown selection mode {other:?} (topk, stochastic)")),
        }
    }
}

/// Every knob of the sampling algorithm.
///
/// `keep_ratio` is the fraction of samples trained per sampled epoch. Reports
/// and the CLI also speak of the drop ratio, which is always `1 - keep_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub keep_ratio: f64,
    pub temperature: f64,
    pub warmup_epochs: usize,
    pub reeval_interval: ReevalInterval,
    pub update_policy: UpdatePolicy,
    pub selection_mode: SelectionMode,
    pub total_epochs: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            keep_ratio: 0.3,
            temperature: 1.0,
            warmup_epochs: 2,
            reeval_interval: ReevalInterval::Never,
            update_policy: UpdatePolicy::Frozen,
            selection_mode: SelectionMode::TopK,
            total_epochs: 10,
            seed: 0,
        }
    }
}

/// `1 - drop`, rounded to 12 decimals so that 0.9 maps to 0.1 rather than
/// 0.09999999999999998.
pub fn keep_from_drop(drop_ratio: f64) -> f64 {
    let keep = 1.0 - drop_ratio;
    if keep.is_finite() {
        (keep * 1e12).round() / 1e12
    } else {
        keep
    }
}

impl SamplerConfig {
    pub fn drop_ratio(&self) -> f64 {
        1.0 - self.keep_ratio
    }

    pub fn set_drop_ratio(&mut self, drop_ratio: f64) {
        self.keep_ratio = keep_from_drop(drop_ratio);
    }

    pub fn validate(self) -> Result<ValidatedConfig> {
        validate_config(self)
    }

    /// Applies one `key = value` entry, as found in a config file.
    ///
    /// Returns `Ok(false)` when the key does not belong to the sampler.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .trim()
                .parse()
                .map_err(|_| format!("{key}: cannot parse {value:?}"))
        }
        match key {
            "keep_ratio" => self.keep_ratio = num(key, value)?,
            "drop_ratio" => self.set_drop_ratio(num(key, value)?),
            "temperature" | "sigma" => self.temperature = num(key, value)?,
            "warmup_epochs" => self.warmup_epochs = num(key, value)?,
            "reeval_interval" => self.reeval_interval = value.parse()?,
            "update_policy" => self.update_policy = value.parse()?,
            "selection_mode" | "selection" => self.selection_mode = value.parse()?,
            "total_epochs" | "epochs" => self.total_epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// A [`SamplerConfig`] whose invariants have been checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedConfig(SamplerConfig);

impl ValidatedConfig {
    pub fn into_inner(self) -> SamplerConfig {
        self.0
    }
}

impl Deref for ValidatedConfig {
    type Target = SamplerConfig;

    fn deref(&self) -> &SamplerConfig {
        &self.0
    }
}

/// Checks every invariant of `cfg` and reports the first one violated.
pub fn validate_config(cfg: SamplerConfig) -> Result<ValidatedConfig> {
    if !(0.0..=1.0).contains(&cfg.keep_ratio) {
        return Err(Error::config("keep_ratio", cfg.keep_ratio, "must be in [0, 1]"));
    }
    if !cfg.temperature.is_finite() || cfg.temperature < 0.0 {
        return Err(Error::config(
            "temperature",
            cfg.temperature,
            "must be finite and >= 0",
        ));
    }
    if cfg.warmup_epochs < 2 {
        return Err(Error::config(
            "warmup_epochs",
            cfg.warmup_epochs,
            "warmup_epochs must be >= 2",
        ));
    }
    if cfg.total_epochs == 0 {
        return Err(Error::config("total_epochs", cfg.total_epochs, "must be positive"));
    }
    if cfg.warmup_epochs > cfg.total_epochs {
        return Err(Error::config(
            "warmup_epochs",
            cfg.warmup_epochs,
            format!("must not exceed total_epochs = {}", cfg.total_epochs),
        ));
    }
    match cfg.reeval_interval {
        ReevalInterval::Every(0) => {
            return Err(Error::config("reeval_interval", 0, "must be positive or \"never\""));
        }
        ReevalInterval::Never if cfg.update_policy == UpdatePolicy::FullEveryK => {
            return Err(Error::config(
                "reeval_interval",
                "never",
                "update_policy full requires a finite interval",
            ));
        }
        _ => {}
    }
    Ok(ValidatedConfig(cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Warmup,
    Sampled,
    Reevaluation,
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseKind::Warmup => "warmup",
            PhaseKind::Sampled => "sampled",
            PhaseKind::Reevaluation => "reevaluation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub epoch: usize,
}

impl Phase {
    pub fn for_epoch(cfg: &SamplerConfig, epoch: usize) -> Phase {
        let kind = if epoch < cfg.warmup_epochs {
            PhaseKind::Warmup
        } else if is_refresh_epoch(cfg, epoch) {
            PhaseKind::Reevaluation
        } else {
            PhaseKind::Sampled
        };
        Phase { kind, epoch }
    }
}

/// True when `epoch` starts with a forward pass over the whole dataset.
///
/// Refreshes are anchored at the first sampled epoch: `(epoch - W) mod K == 0`.
pub fn is_refresh_epoch(cfg: &SamplerConfig, epoch: usize) -> bool {
    if cfg.update_policy != UpdatePolicy::FullEveryK || epoch < cfg.warmup_epochs {
        return false;
    }
    match cfg.reeval_interval {
        ReevalInterval::Never => false,
        ReevalInterval::Every(k) => k > 0 && (epoch - cfg.warmup_epochs) % k == 0,
    }
}
