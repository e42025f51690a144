//! Choosing the training subset of an epoch from an [`ImportanceTable`].

use std::cmp::Ordering;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{SampleId, SelectionMode};
use crate::error::{Error, Result};
use crate::metric::ImportanceTable;

/// Sample ids trained in one epoch, sorted ascending and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subset {
    pub ids: Vec<SampleId>,
    pub epoch: usize,
    pub mode: SelectionMode,
}

impl Subset {
    /// Every id in `0..n`.
    pub fn full(n: usize, epoch: usize) -> Self {
        Subset {
            ids: (0..n).map(SampleId).collect(),
            epoch,
            mode: SelectionMode::TopK,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// `ceil(n * keep_ratio)` clamped to `[0, n]`.
pub fn target_count(n: usize, keep_ratio: f64) -> usize {
    if keep_ratio <= 0.0 {
        return 0;
    }
    if keep_ratio >= 1.0 {
        return n;
    }
    let exact = n as f64 * keep_ratio;
    // 100 * 0.3 is 30.000000000000004 in binary; snap products that are an
    // integer up to rounding noise before taking the ceiling.
    let nearest = exact.round();
    let count = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    (count as usize).min(n)
}

fn by_importance(a: &(SampleId, f64), b: &(SampleId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `count` most probable samples, ties going to the smaller id.
pub fn select_top(table: &ImportanceTable, count: usize, epoch: usize) -> Result<Subset> {
    let mut entries: Vec<(SampleId, f64)> = table.valid_entries().collect();
    if count > entries.len() {
        return Err(Error::CountExceedsPopulation {
            requested: count,
            available: entries.len(),
        });
    }
    if count > 0 && count < entries.len() {
        entries.select_nth_unstable_by(count - 1, by_importance);
    }
    let mut ids: Vec<SampleId> = entries[..count].iter().map(|&(id, _)| id).collect();
    ids.sort_unstable();
    Ok(Subset {
        ids,
        epoch,
        mode: SelectionMode::TopK,
    })
}

/// Prefix-sum tree over non-negative weights.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        Fenwick { tree }
    }

    fn add(&mut self, index: usize, delta: f64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(n.saturating_sub(1))
    }
}

/// Draws `count` distinct samples, each draw picking among the remaining
/// samples with probability proportional to their table probability.
///
/// Once the remaining weight is exhausted (every leftover probability
/// underflowed to zero) the rest are drawn uniformly.
pub fn select_stochastic<R: Rng + ?Sized>(
    table: &ImportanceTable,
    count: usize,
    epoch: usize,
    rng: &mut R,
) -> Result<Subset> {
    let entries: Vec<(SampleId, f64)> = table.valid_entries().collect();
    if count > entries.len() {
        return Err(Error::CountExceedsPopulation {
            requested: count,
            available: entries.len(),
        });
    }
    let mut weights: Vec<f64> = entries.iter().map(|&(_, p)| p.max(0.0)).collect();
    let initial_weight: f64 = weights.iter().sum();
    let mut remaining_weight = initial_weight;
    let mut fenwick = Fenwick::new(&weights);
    let mut taken = vec![false; entries.len()];
    let mut ids = Vec::with_capacity(count);

    for drawn in 0..count {
        let left = entries.len() - drawn;
        let pick = if remaining_weight > 0.0 {
            let target = rng.random::<f64>() * remaining_weight;
            let candidate = fenwick.find(target);
            if taken[candidate] || weights[candidate] <= 0.0 {
                // Rounding drift in the tree; fall back to an exact scan.
                linear_pick(&weights, &taken, target)
            } else {
                Some(candidate)
            }
        } else {
            None
        };
        let pick = pick.unwrap_or_else(|| {
            let k = rng.random_range(0..left);
            taken
                .iter()
                .enumerate()
                .filter(|(_, &t)| !t)
                .nth(k)
                .map(|(i, _)| i)
                .expect("at least one sample remains")
        });
        taken[pick] = true;
        let w = std::mem::take(&mut weights[pick]);
        fenwick.add(pick, -w);
        remaining_weight -= w;
        if remaining_weight <= initial_weight * 1e-9 {
            remaining_weight = weights
                .iter()
                .zip(&taken)
                .filter(|(_, &t)| !t)
                .map(|(w, _)| w)
                .sum();
        }
        ids.push(entries[pick].0);
    }
    ids.sort_unstable();
    Ok(Subset {
        ids,
        epoch,
        mode: SelectionMode::StochasticWithoutReplacement,
    })
}

fn linear_pick(weights: &[f64], taken: &[bool], target: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (i, (&w, &t)) in weights.iter().zip(taken).enumerate() {
        if t || w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if acc > target {
            return Some(i);
        }
    }
    last
}

/// Dispatches on `mode`.
pub fn select<R: Rng + ?Sized>(
    mode: SelectionMode,
    table: &ImportanceTable,
    count: usize,
    epoch: usize,
    rng: &mut R,
) -> Result<Subset> {
    match mode {
        SelectionMode::TopK => select_top(table, count, epoch),
        SelectionMode::StochasticWithoutReplacement => select_stochastic(table, count, epoch, rng),
    }
}

/// Writes `epoch,sample_id` rows for every subset, in order.
pub fn write_subsets_csv<'a>(
    path: impl AsRef<Path>,
    subsets: impl IntoIterator<Item = &'a Subset>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["epoch", "sample_id"])
        .map_err(|e| Error::csv(path, e))?;
    for subset in subsets {
        for id in &subset.ids {
            w.write_record([subset.epoch.to_string(), id.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
