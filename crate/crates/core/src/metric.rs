//! Per-sample logit history, the consecutive-evaluation change score and the
//! temperature softmax that turns scores into selection probabilities.

use std::path::Path;

use serde::Serialize;

use crate::config::SampleId;
use crate::error::{Error, Result};

/// The two most recent logit vectors recorded for each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStore {
    num_samples: usize,
    num_classes: usize,
    current: Vec<Option<Vec<f64>>>,
    previous: Vec<Option<Vec<f64>>>,
    last_epoch_seen: Vec<Option<usize>>,
}

impl LogitStore {
    pub fn new(num_samples: usize, num_classes: usize) -> Self {
        LogitStore {
            num_samples,
            num_classes,
            current: vec![None; num_samples],
            previous: vec![None; num_samples],
            last_epoch_seen: vec![None; num_samples],
        }
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn check_id(&self, id: SampleId) -> Result<usize> {
        if id.0 < self.num_samples {
            Ok(id.0)
        } else {
            Err(Error::SampleOutOfRange {
                id: id.0,
                len: self.num_samples,
            })
        }
    }

    /// Records the logits of `id` for `epoch`.
    ///
    /// A new epoch rotates `current` into `previous`; a second recording in
    /// the same epoch overwrites `current` only.
    pub fn record_logits(&mut self, id: SampleId, logits: &[f64], epoch: usize) -> Result<()> {
        let i = self.check_id(id)?;
        if logits.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes,
                actual: logits.len(),
            });
        }
        match self.last_epoch_seen[i] {
            Some(last) if epoch < last => {
                return Err(Error::EpochRegression {
                    id: i,
                    epoch,
                    last,
                })
            }
            Some(last) if epoch == last => {
                if let Some(cur) = self.current[i].as_mut() {
                    cur.copy_from_slice(logits);
                }
            }
            _ => {
                let old = self.current[i].replace(logits.to_vec());
                self.previous[i] = old;
            }
        }
        self.last_epoch_seen[i] = Some(epoch);
        Ok(())
    }

    pub fn current(&self, id: SampleId) -> Option<&[f64]> {
        self.current.get(id.0)?.as_deref()
    }

    pub fn previous(&self, id: SampleId) -> Option<&[f64]> {
        self.previous.get(id.0)?.as_deref()
    }

    pub fn last_epoch_seen(&self, id: SampleId) -> Option<usize> {
        *self.last_epoch_seen.get(id.0)?
    }

    /// Euclidean distance between the two stored snapshots of `id`, or `None`
    /// if fewer than two exist.
    pub fn change_score(&self, id: SampleId) -> Option<f64> {
        let cur = self.current(id)?;
        let prev = self.previous(id)?;
        Some(l2_distance(cur, prev))
    }
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Free-function form of [`LogitStore::change_score`].
pub fn change_score(store: &LogitStore, id: SampleId) -> Option<f64> {
    store.change_score(id)
}

/// Temperature softmax over `scores`: `exp(t * s_i) / sum_j exp(t * s_j)`.
///
/// The maximum score is subtracted before exponentiating, so arbitrarily
/// large scores stay finite.
pub fn importance_distribution(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("importance_distribution needs at least one score"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .map(|&s| (temperature * (s - max)).exp())
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Change scores and their softmax probabilities at some epoch.
///
/// Samples without a score have no probability either; the distribution is
/// defined over the samples that do.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    scores: Vec<Option<f64>>,
    probabilities: Vec<Option<f64>>,
    temperature: f64,
    computed_at_epoch: usize,
}

impl ImportanceTable {
    pub fn new(num_samples: usize, temperature: f64) -> Self {
        ImportanceTable {
            scores: vec![None; num_samples],
            probabilities: vec![None; num_samples],
            temperature,
            computed_at_epoch: 0,
        }
    }

    /// Builds a table directly from scores, mostly useful in tests and tools.
    pub fn from_scores(scores: Vec<Option<f64>>, temperature: f64, epoch: usize) -> Result<Self> {
        let mut table = ImportanceTable {
            probabilities: vec![None; scores.len()],
            scores,
            temperature,
            computed_at_epoch: epoch,
        };
        table.renormalize()?;
        Ok(table)
    }

    /// Scores every sample of `store`; all of them must have two snapshots.
    pub fn from_store(store: &LogitStore, temperature: f64, epoch: usize) -> Result<Self> {
        let ids: Vec<SampleId> = (0..store.num_samples()).map(SampleId).collect();
        refresh_scores(
            store,
            ImportanceTable::new(store.num_samples(), temperature),
            &ids,
            temperature,
            epoch,
        )
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, id: SampleId) -> Option<f64> {
        *self.scores.get(id.0)?
    }

    pub fn probability(&self, id: SampleId) -> Option<f64> {
        *self.probabilities.get(id.0)?
    }

    pub fn scores(&self) -> &[Option<f64>] {
        &self.scores
    }

    pub fn probabilities(&self) -> &[Option<f64>] {
        &self.probabilities
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn computed_at_epoch(&self) -> usize {
        self.computed_at_epoch
    }

    /// Number of samples carrying a probability.
    pub fn valid_count(&self) -> usize {
        self.probabilities.iter().filter(|p| p.is_some()).count()
    }

    /// `(id, probability)` for every sample with a probability, in id order.
    pub fn valid_entries(&self) -> impl Iterator<Item = (SampleId, f64)> + '_ {
        self.probabilities
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (SampleId(i), p)))
    }

    fn renormalize(&mut self) -> Result<()> {
        let valid: Vec<(usize, f64)> = self
            .scores
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i, s)))
            .collect();
        self.probabilities.iter_mut().for_each(|p| *p = None);
        if valid.is_empty() {
            return Ok(());
        }
        let raw: Vec<f64> = valid.iter().map(|&(_, s)| s).collect();
        let probs = importance_distribution(&raw, self.temperature)?;
        for ((i, _), p) in valid.into_iter().zip(probs) {
            self.probabilities[i] = Some(p);
        }
        Ok(())
    }

    /// Writes `sample_id,score,probability,computed_at_epoch`, one row per
    /// sample; absent values are empty cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            sample_id: usize,
            score: Option<f64>,
            probability: Option<f64>,
            computed_at_epoch: usize,
        }
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for (i, (score, probability)) in self.scores.iter().zip(&self.probabilities).enumerate() {
            w.serialize(Row {
                sample_id: i,
                score: *score,
                probability: *probability,
                computed_at_epoch: self.computed_at_epoch,
            })
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Replaces the scores of `ids` with their current change scores and
/// renormalizes over every scored sample.
pub fn refresh_scores(
    store: &LogitStore,
    mut table: ImportanceTable,
    ids: &[SampleId],
    temperature: f64,
    epoch: usize,
) -> Result<ImportanceTable> {
    if table.len() != store.num_samples() {
        return Err(Error::DimensionMismatch {
            expected: store.num_samples(),
            actual: table.len(),
        });
    }
    for &id in ids {
        if id.0 >= store.num_samples() {
            return Err(Error::SampleOutOfRange {
                id: id.0,
                len: store.num_samples(),
            });
        }
        let score = store.change_score(id).ok_or(Error::MissingSnapshots(id.0))?;
        table.scores[id.0] = Some(score);
    }
    table.temperature = temperature;
    table.computed_at_epoch = epoch;
    table.renormalize()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(pairs: &[(&[f64], &[f64])]) -> LogitStore {
        let c = pairs[0].0.len();
        let mut store = LogitStore::new(pairs.len(), c);
        for (i, (prev, cur)) in pairs.iter().enumerate() {
            store.record_logits(SampleId(i), prev, 0).unwrap();
            store.record_logits(SampleId(i), cur, 1).unwrap();
        }
        store
    }

    #[test]
    fn record_rotates_across_epochs() {
        let mut s = LogitStore::new(2, 2);
        s.record_logits(SampleId(0), &[1.0, 2.0], 0).unwrap();
        s.record_logits(SampleId(0), &[3.0, 4.0], 1).unwrap();
        assert_eq!(s.previous(SampleId(0)), Some(&[1.0, 2.0][..]));
        assert_eq!(s.current(SampleId(0)), Some(&[3.0, 4.0][..]));
        assert_eq!(s.last_epoch_seen(SampleId(0)), Some(1));
    }

    #[test]
    fn record_same_epoch_overwrites() {
        let mut s = LogitStore::new(1, 2);
        s.record_logits(SampleId(0), &[1.0, 2.0], 0).unwrap();
        s.record_logits(SampleId(0), &[9.0, 9.0], 0).unwrap();
        assert_eq!(s.previous(SampleId(0)), None);
        assert_eq!(s.current(SampleId(0)), Some(&[9.0, 9.0][..]));
        assert_eq!(s.change_score(SampleId(0)), None);
    }

    #[test]
    fn record_errors() {
        let mut s = LogitStore::new(2, 2);
        assert!(matches!(
            s.record_logits(SampleId(2), &[0.0, 0.0], 0),
            Err(Error::SampleOutOfRange { id: 2, len: 2 })
        ));
        assert!(matches!(
            s.record_logits(SampleId(0), &[0.0], 0),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        s.record_logits(SampleId(0), &[0.0, 0.0], 3).unwrap();
        assert!(matches!(
            s.record_logits(SampleId(0), &[0.0, 0.0], 2),
            Err(Error::EpochRegression { .. })
        ));
    }

    #[test]
    fn change_score_examples() {
        let s = store_with(&[
            (&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]),
            (&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]),
            (&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]),
        ]);
        assert_eq!(change_score(&s, SampleId(0)), Some(0.0));
        assert!((change_score(&s, SampleId(1)).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(change_score(&s, SampleId(2)), Some(5.0));
        assert_eq!(change_score(&LogitStore::new(1, 1), SampleId(0)), None);
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(importance_distribution(&[2.5, 2.5], 1.0).unwrap(), vec![0.5, 0.5]);
        let u = importance_distribution(&[5.0, 100.0, 0.1], 0.0).unwrap();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = importance_distribution(&[0.0, 2f64.ln()], 1.0).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(importance_distribution(&[], 1.0).is_err());
    }

    #[test]
    fn distribution_survives_huge_scores() {
        // exp(-1e6) underflows to exactly zero in f64 as well as in any
        // max-subtracted reference, so the reference is [1, 0].
        let p = importance_distribution(&[1e6, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        // Moderately large gap that does not underflow: reference is the
        // logistic 1 / (1 + e^-700) and e^-700 / (1 + e^-700).
        let p = importance_distribution(&[700.0, 0.0], 1.0).unwrap();
        let tail = (-700f64).exp();
        assert!((p[1] - tail / (1.0 + tail)).abs() <= tail * 1e-12);
    }

    #[test]
    fn refresh_is_local() {
        let mut s = store_with(&[(&[0.0, 0.0], &[1.0, 0.0]), (&[0.0, 0.0], &[0.0, 2.0])]);
        let table = ImportanceTable::from_store(&s, 1.0, 1).unwrap();
        assert_eq!(table.score(SampleId(0)), Some(1.0));
        assert_eq!(table.score(SampleId(1)), Some(2.0));

        s.record_logits(SampleId(0), &[4.0, 0.0], 2).unwrap();
        s.record_logits(SampleId(1), &[0.0, 9.0], 2).unwrap();
        let partial = refresh_scores(&s, table.clone(), &[SampleId(0)], 1.0, 2).unwrap();
        assert_eq!(partial.score(SampleId(0)), Some(3.0));
        assert_eq!(partial.score(SampleId(1)), Some(2.0));
        assert_eq!(partial.computed_at_epoch(), 2);

        let none = refresh_scores(&s, table.clone(), &[], 1.0, 1).unwrap();
        assert_eq!(none, table);
    }

    #[test]
    fn refresh_requires_two_snapshots() {
        let mut s = LogitStore::new(2, 1);
        s.record_logits(SampleId(0), &[1.0], 0).unwrap();
        let t = ImportanceTable::new(2, 1.0);
        assert!(matches!(
            refresh_scores(&s, t, &[SampleId(0)], 1.0, 0),
            Err(Error::MissingSnapshots(0))
        ));
    }

    #[test]
    fn csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("importance.csv");
        let t = ImportanceTable::from_scores(vec![Some(0.0), None, Some(2f64.ln())], 1.0, 4).unwrap();
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("sample_id,score,probability,computed_at_epoch"));
        assert_eq!(lines.nth(1), Some("1,,,4"));
    }
}
