//! Epoch-by-epoch orchestration: warm-up, scoring, selection, periodic
//! re-evaluation and the post-warm-up update policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{is_refresh_epoch, Phase, PhaseKind, SampleId, UpdatePolicy, ValidatedConfig};
use crate::error::{Error, Result};
use crate::metric::{refresh_scores, ImportanceTable, LogitStore};
use crate::selector::{select, target_count, Subset};

/// What to do in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub phase: Phase,
    pub train_ids: Subset,
    /// A forward-only pass over every sample runs before training.
    pub requires_full_forward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSteps {
    pub epoch: usize,
    pub forwards: u64,
    pub backwards: u64,
    pub refresh_forwards: u64,
}

/// Forward/backward pass counters. Training forwards and the forward-only
/// refresh passes are kept apart.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLedger {
    pub training_forwards: u64,
    pub backward_passes: u64,
    pub refresh_forwards: u64,
    pub per_epoch: Vec<EpochSteps>,
}

impl StepLedger {
    fn entry(&mut self, epoch: usize) -> &mut EpochSteps {
        if self.per_epoch.last().map(|e| e.epoch) != Some(epoch) {
            self.per_epoch.push(EpochSteps {
                epoch,
                forwards: 0,
                backwards: 0,
                refresh_forwards: 0,
            });
        }
        self.per_epoch.last_mut().expect("just pushed")
    }

    /// One forward and one backward pass per trained sample.
    pub fn charge_training(&mut self, epoch: usize, samples: u64) {
        self.training_forwards += samples;
        self.backward_passes += samples;
        let e = self.entry(epoch);
        e.forwards += samples;
        e.backwards += samples;
    }

    pub fn charge_refresh(&mut self, epoch: usize, samples: u64) {
        self.refresh_forwards += samples;
        self.entry(epoch).refresh_forwards += samples;
    }

    /// Training and refresh forwards together.
    pub fn forward_passes(&self) -> u64 {
        self.training_forwards + self.refresh_forwards
    }
}

/// Forwards spent on evaluation, never counted toward speedups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounter {
    pub forwards: u64,
}

/// Plans `epoch` for a dataset of `n` samples.
///
/// Warm-up epochs train everything. Later epochs select
/// `target_count(n, keep_ratio)` samples from `table` with the configured
/// selector; on a refresh epoch the caller must pass the table as refreshed
/// by that epoch's full forward pass.
pub fn plan_epoch<R: Rng + ?Sized>(
    cfg: &ValidatedConfig,
    n: usize,
    epoch: usize,
    table: Option<&ImportanceTable>,
    rng: &mut R,
) -> Result<EpochPlan> {
    if epoch >= cfg.total_epochs {
        return Err(Error::config(
            "epoch",
            epoch,
            format!("must be below total_epochs = {}", cfg.total_epochs),
        ));
    }
    let phase = Phase::for_epoch(cfg, epoch);
    if phase.kind == PhaseKind::Warmup {
        return Ok(EpochPlan {
            phase,
            train_ids: Subset::full(n, epoch),
            requires_full_forward: false,
        });
    }
    let table = table.ok_or(Error::NoImportanceTable(epoch))?;
    let train_ids = select(
        cfg.selection_mode,
        table,
        target_count(n, cfg.keep_ratio),
        epoch,
        rng,
    )?;
    Ok(EpochPlan {
        phase,
        train_ids,
        requires_full_forward: phase.kind == PhaseKind::Reevaluation,
    })
}

/// Updates `table` for a post-warm-up epoch according to the policy.
///
/// `evaluated` are the samples whose logits were just recorded. Frozen
/// ignores them, PartialChosen rescores exactly them, and FullEveryK rescores
/// every sample on refresh epochs and nothing otherwise.
pub fn apply_update_policy(
    cfg: &ValidatedConfig,
    epoch: usize,
    evaluated: &[SampleId],
    store: &LogitStore,
    table: ImportanceTable,
) -> Result<ImportanceTable> {
    match cfg.update_policy {
        UpdatePolicy::Frozen => Ok(table),
        UpdatePolicy::PartialChosen => {
            refresh_scores(store, table, evaluated, cfg.temperature, epoch)
        }
        UpdatePolicy::FullEveryK if is_refresh_epoch(cfg, epoch) => {
            let all: Vec<SampleId> = (0..store.num_samples()).map(SampleId).collect();
            refresh_scores(store, table, &all, cfg.temperature, epoch)
        }
        UpdatePolicy::FullEveryK => Ok(table),
    }
}

/// Number of refresh epochs in `[warmup_epochs, total_epochs)`.
pub fn refresh_epoch_count(cfg: &ValidatedConfig) -> usize {
    (cfg.warmup_epochs..cfg.total_epochs)
        .filter(|&e| is_refresh_epoch(cfg, e))
        .count()
}

/// Baseline forwards over this config's forwards, `E N / (W N + (E - W) ceil(r N) + F N)`,
/// with refresh passes costing the same as a training forward.
///
/// This is a step-count ratio; it says nothing about wall-clock time.
pub fn predicted_speedup(cfg: &ValidatedConfig, n: usize) -> f64 {
    let (e, w) = (cfg.total_epochs as u64, cfg.warmup_epochs as u64);
    let n64 = n as u64;
    let kept = target_count(n, cfg.keep_ratio) as u64;
    let refresh = refresh_epoch_count(cfg) as u64;
    let cost = w * n64 + (e - w) * kept + refresh * n64;
    if cost == 0 {
        return 1.0;
    }
    (e * n64) as f64 / cost as f64
}

/// Owns the logit history and current importance table of one run.
#[derive(Debug, Clone)]
pub struct Scheduler {
    cfg: ValidatedConfig,
    n: usize,
    store: LogitStore,
    table: Option<ImportanceTable>,
}

impl Scheduler {
    pub fn new(cfg: ValidatedConfig, num_samples: usize, num_classes: usize) -> Self {
        Scheduler {
            cfg,
            n: num_samples,
            store: LogitStore::new(num_samples, num_classes),
            table: None,
        }
    }

    pub fn config(&self) -> &ValidatedConfig {
        &self.cfg
    }

    pub fn store(&self) -> &LogitStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut LogitStore {
        &mut self.store
    }

    pub fn table(&self) -> Option<&ImportanceTable> {
        self.table.as_ref()
    }

    pub fn needs_refresh(&self, epoch: usize) -> bool {
        is_refresh_epoch(&self.cfg, epoch)
    }

    /// Runs the forward-only pass of a refresh epoch: `logits` is called for
    /// every sample, results are recorded under `epoch`, and the table is
    /// rescored. The forwards are charged to `ledger` as refresh cost.
    pub fn refresh<F>(&mut self, epoch: usize, mut logits: F, ledger: &mut StepLedger) -> Result<()>
    where
        F: FnMut(SampleId) -> Result<Vec<f64>>,
    {
        let all: Vec<SampleId> = (0..self.n).map(SampleId).collect();
        for &id in &all {
            let l = logits(id)?;
            self.store.record_logits(id, &l, epoch)?;
        }
        ledger.charge_refresh(epoch, self.n as u64);
        let table = self.table.take().ok_or(Error::NoImportanceTable(epoch))?;
        self.table = Some(apply_update_policy(&self.cfg, epoch, &all, &self.store, table)?);
        Ok(())
    }

    pub fn plan<R: Rng + ?Sized>(&self, epoch: usize, rng: &mut R) -> Result<EpochPlan> {
        plan_epoch(&self.cfg, self.n, epoch, self.table.as_ref(), rng)
    }

    /// Bookkeeping after training `trained` in `epoch`: the last warm-up
    /// epoch builds the table from the two warm-up snapshots, and under
    /// PartialChosen the trained samples are rescored. FullEveryK rescoring
    /// happens in [`refresh`](Self::refresh) instead.
    pub fn finish_epoch(&mut self, epoch: usize, trained: &Subset) -> Result<()> {
        let w = self.cfg.warmup_epochs;
        if epoch + 1 == w {
            self.table = Some(ImportanceTable::from_store(
                &self.store,
                self.cfg.temperature,
                epoch,
            )?);
        } else if epoch >= w && self.cfg.update_policy == UpdatePolicy::PartialChosen {
            let table = self.table.take().ok_or(Error::NoImportanceTable(epoch))?;
            self.table = Some(apply_update_policy(
                &self.cfg,
                epoch,
                &trained.ids,
                &self.store,
                table,
            )?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{validate_config, ReevalInterval, SamplerConfig};
    use crate::rng::derive_rng;

    fn cfg(keep: f64, warmup: usize, epochs: usize, policy: UpdatePolicy, k: ReevalInterval) -> ValidatedConfig {
        validate_config(SamplerConfig {
            keep_ratio: keep,
            warmup_epochs: warmup,
            total_epochs: epochs,
            update_policy: policy,
            reeval_interval: k,
            ..SamplerConfig::default()
        })
        .unwrap()
    }

    fn table(n: usize) -> ImportanceTable {
        ImportanceTable::from_scores((0..n).map(|i| Some(i as f64 * 0.1)).collect(), 1.0, 1).unwrap()
    }

    #[test]
    fn frozen_plan_sequence() {
        let c = cfg(0.3, 2, 10, UpdatePolicy::Frozen, ReevalInterval::Never);
        let t = table(20);
        let mut rng = derive_rng(0, "select");
        for epoch in 0..10 {
            let plan = plan_epoch(&c, 20, epoch, Some(&t), &mut rng).unwrap();
            assert!(!plan.requires_full_forward);
            if epoch < 2 {
                assert_eq!(plan.phase.kind, PhaseKind::Warmup);
                assert_eq!(plan.train_ids.len(), 20);
            } else {
                assert_eq!(plan.phase.kind, PhaseKind::Sampled);
                assert_eq!(plan.train_ids.len(), 6);
                // Scores grow with id, so the top six are the last six.
                assert_eq!(plan.train_ids.ids[0], SampleId(14));
            }
        }
    }

    #[test]
    fn refresh_flags_under_full_every_k() {
        let c = cfg(0.5, 2, 8, UpdatePolicy::FullEveryK, ReevalInterval::Every(3));
        let t = table(4);
        let mut rng = derive_rng(0, "select");
        let flagged: Vec<usize> = (0..8)
            .filter(|&e| plan_epoch(&c, 4, e, Some(&t), &mut rng).unwrap().requires_full_forward)
            .collect();
        assert_eq!(flagged, vec![2, 5]);
        assert_eq!(refresh_epoch_count(&c), 2);
    }

    #[test]
    fn keep_all_plans_everything() {
        let c = cfg(1.0, 2, 5, UpdatePolicy::Frozen, ReevalInterval::Never);
        let t = table(7);
        let mut rng = derive_rng(0, "select");
        for epoch in 2..5 {
            assert_eq!(plan_epoch(&c, 7, epoch, Some(&t), &mut rng).unwrap().train_ids, Subset::full(7, epoch));
        }
    }

    #[test]
    fn sampled_epoch_needs_a_table() {
        let c = cfg(0.5, 2, 5, UpdatePolicy::Frozen, ReevalInterval::Never);
        let mut rng = derive_rng(0, "select");
        assert!(plan_epoch(&c, 4, 1, None, &mut rng).is_ok());
        assert!(matches!(plan_epoch(&c, 4, 2, None, &mut rng), Err(Error::NoImportanceTable(2))));
        assert!(plan_epoch(&c, 4, 5, None, &mut rng).is_err());
    }

    fn store_two_epochs(n: usize) -> LogitStore {
        let mut s = LogitStore::new(n, 2);
        for i in 0..n {
            s.record_logits(SampleId(i), &[0.0, 0.0], 0).unwrap();
            s.record_logits(SampleId(i), &[i as f64, 0.0], 1).unwrap();
        }
        s
    }

    #[test]
    fn update_policies() {
        let mut store = store_two_epochs(5);
        let t = ImportanceTable::from_store(&store, 1.0, 1).unwrap();
        for i in 0..5 {
            store.record_logits(SampleId(i), &[0.0, 10.0], 2).unwrap();
        }

        let frozen = cfg(0.4, 2, 10, UpdatePolicy::Frozen, ReevalInterval::Never);
        let out = apply_update_policy(&frozen, 9, &[SampleId(3)], &store, t.clone()).unwrap();
        assert_eq!(out, t);

        let partial = cfg(0.4, 2, 10, UpdatePolicy::PartialChosen, ReevalInterval::Never);
        let out = apply_update_policy(&partial, 2, &[SampleId(3)], &store, t.clone()).unwrap();
        for i in 0..5 {
            if i != 3 {
                assert_eq!(out.score(SampleId(i)), t.score(SampleId(i)));
            }
        }
        assert_ne!(out.score(SampleId(3)), t.score(SampleId(3)));

        let full = cfg(0.4, 2, 10, UpdatePolicy::FullEveryK, ReevalInterval::Every(3));
        assert_eq!(apply_update_policy(&full, 3, &[], &store, t.clone()).unwrap(), t);
        let refreshed = apply_update_policy(&full, 5, &[], &store, t.clone()).unwrap();
        for i in 0..5 {
            assert_eq!(refreshed.score(SampleId(i)), store.change_score(SampleId(i)));
        }
    }

    #[test]
    fn predicted_speedup_examples() {
        let c = cfg(0.1, 2, 10, UpdatePolicy::Frozen, ReevalInterval::Never);
        // 10N / (2N + 8 * 0.1N) = 10 / 2.8 = 25 / 7
        assert_eq!(predicted_speedup(&c, 10_000), 100_000.0 / 28_000.0);
        assert!((predicted_speedup(&c, 10_000) - 25.0 / 7.0).abs() < 1e-15);
        for w in 2..6 {
            let c = cfg(1.0, w, 10, UpdatePolicy::Frozen, ReevalInterval::Never);
            assert_eq!(predicted_speedup(&c, 100), 1.0);
        }
        let c = cfg(0.2, 4, 4, UpdatePolicy::Frozen, ReevalInterval::Never);
        assert_eq!(predicted_speedup(&c, 100), 1.0);
        // Refresh passes count: E=8, W=2, K=3 -> F=2; 8N / (2N + 6 * 0.5N + 2N).
        let c = cfg(0.5, 2, 8, UpdatePolicy::FullEveryK, ReevalInterval::Every(3));
        assert_eq!(predicted_speedup(&c, 10), 80.0 / 70.0);
    }

    #[test]
    fn ledger_accounting() {
        let mut l = StepLedger::default();
        l.charge_training(0, 10);
        l.charge_training(0, 5);
        l.charge_refresh(1, 15);
        l.charge_training(1, 3);
        assert_eq!(l.training_forwards, 18);
        assert_eq!(l.backward_passes, 18);
        assert_eq!(l.forward_passes(), 33);
        assert_eq!(l.per_epoch.len(), 2);
        assert_eq!(l.per_epoch[0].forwards, 15);
        assert_eq!(l.per_epoch[1].refresh_forwards, 15);
    }

    #[test]
    fn scheduler_builds_table_at_end_of_warmup() {
        let c = cfg(0.5, 2, 4, UpdatePolicy::Frozen, ReevalInterval::Never);
        let mut s = Scheduler::new(c, 3, 2);
        let mut rng = derive_rng(0, "select");
        for epoch in 0..2 {
            let plan = s.plan(epoch, &mut rng).unwrap();
            for id in &plan.train_ids.ids {
                s.store_mut().record_logits(*id, &[epoch as f64 * id.0 as f64, 0.0], epoch).unwrap();
            }
            assert!(s.table().is_none());
            s.finish_epoch(epoch, &plan.train_ids).unwrap();
        }
        let t = s.table().unwrap();
        assert_eq!(t.computed_at_epoch(), 1);
        assert_eq!(t.score(SampleId(2)), Some(2.0));
        let plan = s.plan(2, &mut rng).unwrap();
        assert_eq!(plan.train_ids.ids, vec![SampleId(1), SampleId(2)]);
    }
}
