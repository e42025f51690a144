//! Synthetic datasets, CSV ingestion and train/validation splitting.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::SampleId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Per-sample difficulty tag attached by [`gen_hard_mixture`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// Row-major `N x D` features with integer labels in `[0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    pub split: Split,
    pub provenance: String,
    /// Row index of each sample in the dataset this one was split from.
    pub original_index: Vec<usize>,
    pub difficulty: Option<Vec<Difficulty>>,
}

impl Dataset {
    /// Validates shapes, label range and finiteness.
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset needs at least one sample"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim.max(1),
                actual: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(
                "features",
                features[pos],
                format!("row {} contains a non-finite value", pos / dim),
            ));
        }
        let n = labels.len();
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
            split: Split::Train,
            provenance: provenance.into(),
            original_index: (0..n).collect(),
            difficulty: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, id: SampleId) -> &[f64] {
        &self.features[id.0 * self.dim..(id.0 + 1) * self.dim]
    }

    pub fn sample(&self, id: SampleId) -> Result<(&[f64], usize)> {
        if id.0 >= self.len() {
            return Err(Error::SampleOutOfRange {
                id: id.0,
                len: self.len(),
            });
        }
        Ok((self.features(id), self.labels[id.0]))
    }

    pub fn ids(&self) -> Vec<SampleId> {
        (0..self.len()).map(SampleId).collect()
    }

    /// Rows `indices` of `self`, renumbered densely; `original_index`
    /// composes through.
    fn take(&self, indices: &[usize], split: Split) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(SampleId(i)));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
            split,
            provenance: self.provenance.clone(),
            original_index: indices.iter().map(|&i| self.original_index[i]).collect(),
            difficulty: self
                .difficulty
                .as_ref()
                .map(|d| indices.iter().map(|&i| d[i]).collect()),
        }
    }

    /// Writes `f0,...,f{D-1},label` with a header row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for id in self.ids() {
            let mut row: Vec<String> = self.features(id).iter().map(|v| format!("{v:?}")).collect();
            row.push(self.labels[id.0].to_string());
            w.write_record(&row).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Center of class `c` out of `classes`: on a regular polygon in the first
/// two coordinates with adjacent centers `separation` apart (on a line when
/// `dim == 1`).
fn class_center(c: usize, classes: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut center = vec![0.0; dim];
    if dim == 1 || classes == 1 {
        center[0] = (c as f64 - (classes as f64 - 1.0) / 2.0) * separation;
        return center;
    }
    let radius = separation / (2.0 * (PI / classes as f64).sin());
    let angle = 2.0 * PI * c as f64 / classes as f64;
    center[0] = radius * angle.cos();
    center[1] = radius * angle.sin();
    center
}

/// Isotropic Gaussian blobs, samples interleaved by class.
pub fn gen_gaussian_blobs<R: Rng + ?Sized>(
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    class_separation: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n_per_class == 0 || n_classes == 0 || dim == 0 {
        return Err(Error::Empty("gaussian blobs need positive counts and dimension"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::config("noise_sigma", noise_sigma, "must be finite and >= 0"));
    }
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| class_center(c, n_classes, dim, class_separation))
        .collect();
    let n = n_per_class * n_classes;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (c, center) in centers.iter().enumerate() {
            for &mu in center {
                let z: f64 = rng.sample(StandardNormal);
                features.push(mu + noise_sigma * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        features,
        labels,
        dim,
        n_classes,
        format!(
            "blobs(n_per_class={n_per_class}, classes={n_classes}, dim={dim}, \
             separation={class_separation}, noise={noise_sigma})"
        ),
    )
}

/// Offset of the curved class boundary `x0 = 0.5 * sin(x1)`.
fn mixture_boundary(x1: f64) -> f64 {
    0.5 * x1.sin()
}

/// Two-class, two-feature mixture of 70% easy and 30% hard samples.
///
/// The classes are split by the curve `x0 = 0.5 sin(x1)`. Easy samples lie
/// 2 to 4 units from `x0 = 0`, on their class's side, so they alone are
/// linearly separable. Hard samples lie within 0.6 of the curve.
pub fn gen_hard_mixture<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::config("n", n, "hard mixture needs at least 10 samples"));
    }
    let n_easy = n * 7 / 10;
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut difficulty = Vec::with_capacity(n);
    for i in 0..n {
        let x1 = rng.random_range(-3.0..3.0);
        let (x0, label, kind) = if i < n_easy {
            let label = i % 2;
            let side = if label == 1 { 1.0 } else { -1.0 };
            (side * rng.random_range(2.0..4.0), label, Difficulty::Easy)
        } else {
            let offset: f64 = rng.random_range(-0.6..0.6);
            let label = usize::from(offset > 0.0);
            (mixture_boundary(x1) + offset, label, Difficulty::Hard)
        };
        features.extend([x0, x1]);
        labels.push(label);
        difficulty.push(kind);
    }
    let mut ds = Dataset::new(features, labels, 2, 2, format!("hard_mixture(n={n})"))?;
    ds.difficulty = Some(difficulty);
    Ok(ds)
}

/// Reads a numeric CSV; `label_column` holds integer class labels which must
/// form a contiguous range (they are shifted to start at 0).
pub fn load_csv(path: impl AsRef<Path>, label_column: usize, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(file);

    let mut width = None;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        match width {
            None => {
                if label_column >= record.len() {
                    return Err(parse_err(
                        line,
                        format!("label column {label_column} missing from {} columns", record.len()),
                    ));
                }
                if record.len() < 2 {
                    return Err(parse_err(line, "need at least one feature column".into()));
                }
                width = Some(record.len());
            }
            Some(w) if w != record.len() => {
                return Err(parse_err(
                    line,
                    format!("ragged row: expected {w} columns, found {}", record.len()),
                ));
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column {j}: non-numeric cell {cell:?}")))?;
            if !value.is_finite() {
                return Err(parse_err(line, format!("column {j}: non-finite value {cell:?}")));
            }
            if j == label_column {
                if value.fract() != 0.0 || value.abs() > i64::MAX as f64 {
                    return Err(parse_err(line, format!("label {cell:?} is not an integer")));
                }
                raw_labels.push((value as i64, line));
            } else {
                features.push(value);
            }
        }
    }
    let width = width.ok_or(Error::Empty("csv file has no data rows"))?;

    let distinct: BTreeSet<i64> = raw_labels.iter().map(|&(l, _)| l).collect();
    let min = *distinct.first().expect("non-empty");
    let max = *distinct.last().expect("non-empty");
    if (max - min + 1) as usize != distinct.len() {
        let missing = (min..=max).find(|l| !distinct.contains(l)).expect("gap exists");
        return Err(parse_err(
            0,
            format!("labels are not contiguous: {min}..={max} has no {missing}"),
        ));
    }
    let labels = raw_labels.iter().map(|&(l, _)| (l - min) as usize).collect();
    Dataset::new(
        features,
        labels,
        width - 1,
        distinct.len(),
        path.display().to_string(),
    )
}

/// Stratified seeded split: `round(N * validation_fraction)` rows go to
/// validation, apportioned across classes by largest remainder so label
/// shares match the source. Each class is shuffled before its share is taken.
/// Both splits keep rows in original order and record where they came from
/// in `original_index`.
pub fn split<R: Rng + ?Sized>(
    dataset: &Dataset,
    validation_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::config(
            "validation_fraction",
            validation_fraction,
            "must be in (0, 1)",
        ));
    }
    let n_val = (n as f64 * validation_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::config(
            "validation_fraction",
            validation_fraction,
            format!("leaves an empty split for {n} samples"),
        ));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    // Largest-remainder apportionment of n_val; ties go to the lower class.
    let quotas: Vec<f64> = by_class
        .iter()
        .map(|rows| rows.len() as f64 * n_val as f64 / n as f64)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = n_val - take.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            missing -= 1;
        }
    }

    let mut val = Vec::with_capacity(n_val);
    let mut train = Vec::with_capacity(n - n_val);
    for (rows, &k) in by_class.iter_mut().zip(&take) {
        rows.shuffle(rng);
        val.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    val.sort_unstable();
    train.sort_unstable();
    Ok((
        dataset.take(&train, Split::Train),
        dataset.take(&val, Split::Validation),
    ))
}
