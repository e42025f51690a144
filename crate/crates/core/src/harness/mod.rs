//! Paired baseline / subset-selection experiments, sweeps and reports.

mod cli;
mod report;
mod sweep;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use cli::{main_with_args, Cli};
pub use report::{
    read_report, strip_wall_clock, write_report, ConfigSnapshot, EpochRecord, RunSummary,
    TrainingReport, REPORT_SCHEMA_VERSION,
};
pub use sweep::{sweep, write_summary_csv, SweepGrid, SweepOutcome, SweepRow};

use crate::config::{PhaseKind, SampleId, SamplerConfig, ValidatedConfig};
use crate::data::{self, Dataset, Difficulty};
use crate::error::{Error, Result};
use crate::metric::ImportanceTable;
use crate::model::{evaluate, train_epoch, DenseModel, ModelSpec, SgdConfig};
use crate::rng::{derive_rng, streams};
use crate::scheduler::{predicted_speedup, EvalCounter, Scheduler, StepLedger};
use crate::selector::Subset;

/// Where the experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    Blobs {
        n_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        noise: f64,
    },
    Mixture {
        n: usize,
    },
    Csv {
        path: PathBuf,
        label_column: Option<usize>,
        has_header: bool,
    },
}

impl DatasetSpec {
    pub fn blobs() -> Self {
        DatasetSpec::Blobs {
            n_per_class: 500,
            classes: 2,
            dim: 2,
            separation: 6.0,
            noise: 1.0,
        }
    }

    pub fn mixture() -> Self {
        DatasetSpec::Mixture { n: 2000 }
    }

    /// Generates or loads the full dataset from the `data` stream of `seed`.
    pub fn materialize(&self, seed: u64) -> Result<Dataset> {
        let mut rng = derive_rng(seed, streams::DATA);
        match self {
            DatasetSpec::Blobs {
                n_per_class,
                classes,
                dim,
                separation,
                noise,
            } => data::gen_gaussian_blobs(*n_per_class, *classes, *dim, *separation, *noise, &mut rng),
            DatasetSpec::Mixture { n } => data::gen_hard_mixture(*n, &mut rng),
            DatasetSpec::Csv {
                path,
                label_column,
                has_header,
            } => {
                let column = match label_column {
                    Some(c) => *c,
                    None => last_column(path, *has_header)?,
                };
                data::load_csv(path, column, *has_header)
            }
        }
    }

    /// Overrides the sample count of a generated dataset.
    pub fn with_samples(self, samples: usize) -> Self {
        match self {
            DatasetSpec::Blobs {
                classes,
                dim,
                separation,
                noise,
                ..
            } => DatasetSpec::Blobs {
                n_per_class: samples.div_ceil(classes.max(1)),
                classes,
                dim,
                separation,
                noise,
            },
            DatasetSpec::Mixture { .. } => DatasetSpec::Mixture { n: samples },
            csv => csv,
        }
    }
}

fn last_column(path: &std::path::Path, has_header: bool) -> Result<usize> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(file);
    let mut record = csv::StringRecord::new();
    let found = reader
        .read_record(&mut record)
        .map_err(|e| Error::csv(path, e))?;
    if !found || record.is_empty() {
        return Err(Error::Empty("csv file has no data rows"));
    }
    Ok(record.len() - 1)
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Blobs { .. } => f.write_str("blobs"),
            DatasetSpec::Mixture { .. } => f.write_str("mixture"),
            DatasetSpec::Csv { path, .. } => write!(f, "csv:{}", path.display()),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "blobs" => Ok(DatasetSpec::blobs()),
            "mixture" => Ok(DatasetSpec::mixture()),
            _ => match s.strip_prefix("csv:") {
                Some(path) if !path.is_empty() => Ok(DatasetSpec::Csv {
                    path: PathBuf::from(path),
                    label_column: None,
                    has_header: false,
                }),
                _ => Err(format!("unknown dataset {s:?} (blobs, mixture, csv:<path>)")),
            },
        }
    }
}

/// When the logits used for scoring are captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitCapture {
    /// From the training forward pass, before that batch's update.
    #[default]
    Batch,
    /// From an extra forward pass over the trained samples after the epoch.
    EpochEnd,
}

impl FromStr for LogitCapture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "batch" => Ok(LogitCapture::Batch),
            "epoch-end" | "epoch_end" => Ok(LogitCapture::EpochEnd),
            other => Err(format!("unknown logit capture {other:?} (batch, epoch-end)")),
        }
    }
}

/// Everything needed to run one paired experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sampler: SamplerConfig,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub sgd: SgdConfig,
    pub validation_fraction: f64,
    #[serde(default)]
    pub logit_capture: LogitCapture,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            sampler: SamplerConfig::default(),
            dataset: DatasetSpec::blobs(),
            model: ModelSpec::Linear,
            sgd: SgdConfig::default(),
            validation_fraction: 0.2,
            logit_capture: LogitCapture::Batch,
        }
    }
}

/// Train and validation splits shared by both arms of an experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub validation: Dataset,
}

impl PreparedData {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        let full = spec.dataset.materialize(spec.sampler.seed)?;
        let (train, validation) = data::split(
            &full,
            spec.validation_fraction,
            &mut derive_rng(spec.sampler.seed, streams::SPLIT),
        )?;
        Ok(PreparedData { train, validation })
    }
}

/// Everything one arm of an experiment produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<EpochRecord>,
    pub ledger: StepLedger,
    pub eval: EvalCounter,
    pub final_validation_accuracy: f64,
    pub initial_parameter_hash: String,
    pub model: DenseModel,
    pub subsets: Vec<Subset>,
    pub table: Option<ImportanceTable>,
    pub wall_clock_ms: f64,
}

impl RunOutcome {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            epochs: self.records.clone(),
            final_validation_accuracy: self.final_validation_accuracy,
            training_forwards: self.ledger.training_forwards,
            backward_passes: self.ledger.backward_passes,
            refresh_forwards: self.ledger.refresh_forwards,
            evaluation_forwards: self.eval.forwards,
            initial_parameter_hash: self.initial_parameter_hash.clone(),
            final_parameter_hash: self.model.parameter_hash(),
            wall_clock_ms: self.wall_clock_ms,
        }
    }
}

fn hard_fraction(train: &Dataset, ids: &[SampleId]) -> Option<f64> {
    let difficulty = train.difficulty.as_ref()?;
    if ids.is_empty() {
        return None;
    }
    let hard = ids
        .iter()
        .filter(|id| difficulty[id.0] == Difficulty::Hard)
        .count();
    Some(hard as f64 / ids.len() as f64)
}

/// Trains one arm. `sampler = None` is the baseline: every epoch trains the
/// full dataset and no logits are kept.
///
/// Both arms draw model initialization from the `init` stream and the
/// visiting order of epoch `e` from the `shuffle/e` stream, so with the same
/// id set they train identically.
pub fn train_run(
    spec: &ExperimentSpec,
    data: &PreparedData,
    sampler: Option<&ValidatedConfig>,
) -> Result<RunOutcome> {
    spec.sgd.validate()?;
    let seed = spec.sampler.seed;
    let total_epochs = spec.sampler.total_epochs;
    let train = &data.train;
    let val_ids = data.validation.ids();
    let n = train.len();

    let mut model = spec.model.build(
        train.dim(),
        train.num_classes(),
        &mut derive_rng(seed, streams::INIT),
    );
    let initial_parameter_hash = model.parameter_hash();
    let mut scheduler = sampler.map(|cfg| Scheduler::new(cfg.clone(), n, train.num_classes()));
    let mut ledger = StepLedger::default();
    let mut eval = EvalCounter::default();
    let mut records = Vec::with_capacity(total_epochs);
    let mut subsets = Vec::new();
    let started = Instant::now();

    for epoch in 0..total_epochs {
        let epoch_start = Instant::now();
        let (phase, refresh, ids) = match scheduler.as_mut() {
            None => (PhaseKind::Warmup, false, Subset::full(n, epoch)),
            Some(sched) => {
                let refresh = sched.needs_refresh(epoch);
                if refresh {
                    let model = &model;
                    sched.refresh(
                        epoch,
                        |id| model.forward(train.features(id)),
                        &mut ledger,
                    )?;
                }
                let plan = sched.plan(epoch, &mut derive_rng(seed, &streams::select(epoch)))?;
                (plan.phase.kind, refresh, plan.train_ids)
            }
        };

        let train_loss = if ids.is_empty() {
            None
        } else {
            let store = scheduler.as_mut().map(|s| s.store_mut());
            Some(train_epoch(
                &mut model,
                train,
                &ids.ids,
                &spec.sgd,
                &mut derive_rng(seed, &streams::shuffle(epoch)),
                store,
                &mut ledger,
                epoch,
            )?)
        };

        if let Some(sched) = scheduler.as_mut() {
            if spec.logit_capture == LogitCapture::EpochEnd && !ids.is_empty() {
                for &id in &ids.ids {
                    let logits = model.forward(train.features(id))?;
                    sched.store_mut().record_logits(id, &logits, epoch)?;
                }
                ledger.charge_refresh(epoch, ids.len() as u64);
            }
            sched.finish_epoch(epoch, &ids)?;
        }

        let accuracy = evaluate(&model, &data.validation, &val_ids, &mut eval)?;
        let steps = ledger.per_epoch.last().filter(|s| s.epoch == epoch).copied();
        records.push(EpochRecord {
            epoch,
            phase: scheduler.is_some().then_some(phase),
            subset_size: ids.len(),
            refresh,
            train_loss,
            validation_accuracy: accuracy,
            training_forwards: steps.map_or(0, |s| s.forwards),
            refresh_forwards: steps.map_or(0, |s| s.refresh_forwards),
            cumulative_forwards: ledger.training_forwards,
            cumulative_backwards: ledger.backward_passes,
            cumulative_refresh_forwards: ledger.refresh_forwards,
            hard_fraction: hard_fraction(train, &ids.ids),
            wall_clock_ms: epoch_start.elapsed().as_secs_f64() * 1e3,
        });
        if scheduler.is_some() {
            subsets.push(ids);
        }
    }

    let final_validation_accuracy = records.last().map_or(0.0, |r| r.validation_accuracy);
    Ok(RunOutcome {
        records,
        ledger,
        eval,
        final_validation_accuracy,
        initial_parameter_hash,
        model,
        subsets,
        table: scheduler.and_then(|s| s.table().cloned()),
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs the baseline arm for `spec`.
pub fn run_baseline(spec: &ExperimentSpec, data: &PreparedData) -> Result<RunOutcome> {
    train_run(spec, data, None)
}

/// Pairs an already computed baseline with a subset-selection run.
pub fn pair_with_baseline(
    spec: &ExperimentSpec,
    data: &PreparedData,
    baseline: &RunOutcome,
) -> Result<(TrainingReport, RunOutcome)> {
    let cfg = spec.sampler.clone().validate()?;
    let treated = train_run(spec, data, Some(&cfg))?;
    let report = TrainingReport::new(spec, data, &cfg, baseline.summary(), treated.summary());
    Ok((report, treated))
}

/// Runs the baseline and the subset-selection arm under the same seeds and
/// returns their paired report.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<TrainingReport> {
    run_experiment_detailed(spec).map(|(report, _, _)| report)
}

/// [`run_experiment`] that also hands back both arms' raw outcomes.
pub fn run_experiment_detailed(spec: &ExperimentSpec) -> Result<(TrainingReport, RunOutcome, RunOutcome)> {
    let cfg = spec.sampler.clone().validate()?;
    let data = PreparedData::new(spec)?;
    let baseline = run_baseline(spec, &data)?;
    let treated = train_run(spec, &data, Some(&cfg))?;
    let report = TrainingReport::new(spec, &data, &cfg, baseline.summary(), treated.summary());
    Ok((report, baseline, treated))
}

/// Predicted step-count speedup of `spec` on its prepared training set.
pub fn predicted_for(spec: &ExperimentSpec, data: &PreparedData) -> Result<f64> {
    let cfg = spec.sampler.clone().validate()?;
    Ok(predicted_speedup(&cfg, data.train.len()))
}
