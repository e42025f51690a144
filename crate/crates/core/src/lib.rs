//! Importance-weighted subset selection for faster training.
//!
//! Every sample is trained for a few warm-up epochs while its logits are
//! recorded. The distance between a sample's logits in two consecutive
//! evaluations becomes its change score, a temperature softmax turns scores
//! into selection probabilities, and later epochs train only on the
//! `ceil(N * keep_ratio)` most important samples. Scores can stay frozen, be
//! refreshed for the samples just trained, or be recomputed for the whole
//! dataset every K epochs.
//!
//! The crate also carries a small dense-network trainer, synthetic datasets
//! and an experiment harness that pairs every run with a full-data baseline.

pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod metric;
pub mod model;
pub mod rng;
pub mod scheduler;
pub mod selector;

pub use config::{
    validate_config, Phase, PhaseKind, ReevalInterval, SampleId, SamplerConfig, SelectionMode,
    UpdatePolicy, ValidatedConfig,
};
pub use error::{Error, Result};
pub use metric::{change_score, importance_distribution, refresh_scores, ImportanceTable, LogitStore};
pub use rng::{derive_rng, DeterministicGenerator};
pub use scheduler::{apply_update_policy, plan_epoch, predicted_speedup, EpochPlan, Scheduler, StepLedger};
pub use selector::{select_stochastic, select_top, target_count, Subset};
