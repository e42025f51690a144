//! JSON report of a paired baseline / subset-selection experiment.
//!
//! `step_speedup` is the ratio of training forward passes and is exactly
//! reproducible. Wall-clock fields (every key starting with `wall_clock`)
//! depend on the machine and are the only fields that differ between two
//! runs with the same flags. A step-count speedup bounds what wall-clock
//! time can gain from sampling but does not reproduce hardware-specific
//! end-to-end measurements.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSpec, ExperimentSpec, LogitCapture, PreparedData};
use crate::config::{PhaseKind, SamplerConfig, ValidatedConfig};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, SgdConfig};
use crate::scheduler::predicted_speedup;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` for baseline epochs.
    pub phase: Option<PhaseKind>,
    pub subset_size: usize,
    pub refresh: bool,
    pub train_loss: Option<f64>,
    pub validation_accuracy: f64,
    pub training_forwards: u64,
    pub refresh_forwards: u64,
    pub cumulative_forwards: u64,
    pub cumulative_backwards: u64,
    pub cumulative_refresh_forwards: u64,
    /// Share of the trained samples tagged hard, for datasets that carry tags.
    pub hard_fraction: Option<f64>,
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: Vec<EpochRecord>,
    pub final_validation_accuracy: f64,
    pub training_forwards: u64,
    pub backward_passes: u64,
    pub refresh_forwards: u64,
    pub evaluation_forwards: u64,
    pub initial_parameter_hash: String,
    pub final_parameter_hash: String,
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub sampler: SamplerConfig,
    pub drop_ratio: f64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub sgd: SgdConfig,
    pub validation_fraction: f64,
    pub logit_capture: LogitCapture,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub schema_version: u32,
    pub config: ConfigSnapshot,
    pub baseline: RunSummary,
    pub swiftlearn: RunSummary,
    pub predicted_speedup: f64,
    /// Baseline training forwards over subset-selection training forwards.
    pub step_speedup: f64,
    pub wall_clock_speedup: f64,
    /// Subset-selection minus baseline final accuracy, in percentage points.
    pub delta_accuracy: f64,
    /// Both arms started from bit-identical parameters.
    pub paired_init: bool,
}

impl TrainingReport {
    pub fn new(
        spec: &ExperimentSpec,
        data: &PreparedData,
        cfg: &ValidatedConfig,
        baseline: RunSummary,
        swiftlearn: RunSummary,
    ) -> Self {
        let step_speedup = ratio(baseline.training_forwards as f64, swiftlearn.training_forwards as f64);
        let wall_clock_speedup = ratio(baseline.wall_clock_ms, swiftlearn.wall_clock_ms);
        let delta_accuracy =
            (swiftlearn.final_validation_accuracy - baseline.final_validation_accuracy) * 100.0;
        TrainingReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: ConfigSnapshot {
                sampler: spec.sampler.clone(),
                drop_ratio: spec.sampler.drop_ratio(),
                dataset: spec.dataset.clone(),
                model: spec.model,
                sgd: spec.sgd,
                validation_fraction: spec.validation_fraction,
                logit_capture: spec.logit_capture,
                train_samples: data.train.len(),
                validation_samples: data.validation.len(),
                num_classes: data.train.num_classes(),
            },
            paired_init: baseline.initial_parameter_hash == swiftlearn.initial_parameter_hash,
            predicted_speedup: predicted_speedup(cfg, data.train.len()),
            baseline,
            swiftlearn,
            step_speedup,
            wall_clock_speedup,
            delta_accuracy,
        }
    }

    /// Recomputes `step_speedup` from the per-epoch records alone.
    pub fn step_speedup_from_records(&self) -> f64 {
        let total = |run: &RunSummary| run.epochs.iter().map(|e| e.training_forwards).sum::<u64>();
        ratio(total(&self.baseline) as f64, total(&self.swiftlearn) as f64)
    }

    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let s = &self.config.sampler;
        out.push_str(&format!(
            "keep_ratio={} drop_ratio={} temperature={} warmup={} K={} policy={} selection={} epochs={} seed={}\n",
            s.keep_ratio,
            self.config.drop_ratio,
            s.temperature,
            s.warmup_epochs,
            s.reeval_interval,
            s.update_policy,
            s.selection_mode,
            s.total_epochs,
            s.seed
        ));
        out.push_str(&format!(
            "{:<6} {:<13} {:>7} {:>8} {:>10} {:>10} {:>10}\n",
            "epoch", "phase", "subset", "refresh", "loss", "val_acc", "base_acc"
        ));
        for (sw, base) in self.swiftlearn.epochs.iter().zip(&self.baseline.epochs) {
            out.push_str(&format!(
                "{:<6} {:<13} {:>7} {:>8} {:>10} {:>10.4} {:>10.4}\n",
                sw.epoch,
                sw.phase.map_or("-".to_string(), |p| p.to_string()),
                sw.subset_size,
                if sw.refresh { "yes" } else { "" },
                sw.train_loss.map_or("-".to_string(), |l| format!("{l:.5}")),
                sw.validation_accuracy,
                base.validation_accuracy,
            ));
        }
        out.push_str(&format!(
            "final accuracy: swiftlearn {:.4}, baseline {:.4}, delta {:+.2} pp\n",
            self.swiftlearn.final_validation_accuracy,
            self.baseline.final_validation_accuracy,
            self.delta_accuracy
        ));
        out.push_str(&format!(
            "training forwards: swiftlearn {}, baseline {}, refresh {}\n",
            self.swiftlearn.training_forwards,
            self.baseline.training_forwards,
            self.swiftlearn.refresh_forwards
        ));
        out.push_str(&format!(
            "speedup: step {:.4}x, predicted {:.4}x, wall-clock {:.3}x\n",
            self.step_speedup, self.predicted_speedup, self.wall_clock_speedup
        ));
        out
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Writes `report` as pretty JSON. The file appears only once fully
/// written: content goes to a sibling temp file that is then renamed.
pub fn write_report(report: &TrainingReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_atomic(path, json.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes)
        .and_then(|_| file.write_all(b"\n"))
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<TrainingReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Drops every object key starting with `wall_clock`, recursively.
pub fn strip_wall_clock(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.starts_with("wall_clock"));
            map.values_mut().for_each(strip_wall_clock);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_wall_clock),
        _ => {}
    }
}
