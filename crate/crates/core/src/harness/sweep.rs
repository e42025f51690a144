use std::path::Path;

use serde::Serialize;

use super::{pair_with_baseline, run_baseline, ExperimentSpec, PreparedData, TrainingReport};
use crate::config::{ReevalInterval, UpdatePolicy};
use crate::error::{Error, Result};

/// Values to sweep; empty axes keep the template's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub keep_ratios: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub reeval_intervals: Vec<ReevalInterval>,
    pub policies: Vec<UpdatePolicy>,
}

impl SweepGrid {
    /// Cartesian product in axis order keep ratio, temperature, interval,
    /// policy.
    pub fn points(&self, template: &ExperimentSpec) -> Vec<ExperimentSpec> {
        fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
            if values.is_empty() {
                vec![fallback]
            } else {
                values.to_vec()
            }
        }
        let s = &template.sampler;
        let mut out = Vec::new();
        for &r in &axis(&self.keep_ratios, s.keep_ratio) {
            for &t in &axis(&self.temperatures, s.temperature) {
                for &k in &axis(&self.reeval_intervals, s.reeval_interval) {
                    for &p in &axis(&self.policies, s.update_policy) {
                        let mut spec = template.clone();
                        spec.sampler.keep_ratio = r;
                        spec.sampler.temperature = t;
                        spec.sampler.reeval_interval = k;
                        spec.sampler.update_policy = p;
                        out.push(spec);
                    }
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.keep_ratios.is_empty()
            && self.temperatures.is_empty()
            && self.reeval_intervals.is_empty()
            && self.policies.is_empty()
    }
}

/// One line of the sweep summary. Metric cells are empty for failed points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub r: f64,
    pub sigma: f64,
    #[serde(rename = "K")]
    pub k: String,
    pub policy: String,
    pub final_acc: Option<f64>,
    pub delta_acc: Option<f64>,
    pub step_speedup: Option<f64>,
    pub wall_speedup: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// One entry per grid point, in grid order; failed points carry their
    /// error message.
    pub reports: Vec<std::result::Result<TrainingReport, String>>,
    pub rows: Vec<SweepRow>,
}

/// Runs every grid point against one shared baseline. A failing point is
/// recorded and the sweep moves on.
pub fn sweep(template: &ExperimentSpec, grid: &SweepGrid) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid has no values"));
    }
    let data = PreparedData::new(template)?;
    let baseline = run_baseline(template, &data)?;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for spec in grid.points(template) {
        let s = &spec.sampler;
        let mut row = SweepRow {
            r: s.keep_ratio,
            sigma: s.temperature,
            k: s.reeval_interval.to_string(),
            policy: s.update_policy.to_string(),
            final_acc: None,
            delta_acc: None,
            step_speedup: None,
            wall_speedup: None,
            status: "ok".into(),
        };
        match pair_with_baseline(&spec, &data, &baseline) {
            Ok((report, _)) => {
                row.final_acc = Some(report.swiftlearn.final_validation_accuracy);
                row.delta_acc = Some(report.delta_accuracy);
                row.step_speedup = Some(report.step_speedup);
                row.wall_speedup = Some(report.wall_clock_speedup);
                reports.push(Ok(report));
            }
            Err(e) => {
                row.status = format!("failed: {e}");
                reports.push(Err(e.to_string()));
            }
        }
        rows.push(row);
    }
    Ok(SweepOutcome { reports, rows })
}

pub fn write_summary_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
