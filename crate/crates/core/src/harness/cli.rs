//! `swiftlearn run` and `swiftlearn sweep`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{
    run_experiment_detailed, sweep, write_report, write_summary_csv, DatasetSpec, ExperimentSpec,
    LogitCapture, SweepGrid,
};
use crate::config::{keep_from_drop, ReevalInterval, SelectionMode, UpdatePolicy};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::selector::write_subsets_csv;

pub const SEED_ENV: &str = "SWIFTLEARN_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "swiftlearn",
    version,
    about = "Train on importance-selected subsets and compare against full-data baselines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one paired baseline / subset-selection experiment.
    Run(CommonArgs),
    /// Run a grid of experiments against a shared baseline.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "drop_ratio")]
    pub keep_ratio: Option<f64>,
    /// 1 - keep ratio.
    #[arg(long)]
    pub drop_ratio: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Positive integer or `never`.
    #[arg(long)]
    pub reeval_interval: Option<ReevalInterval>,
    /// frozen, partial or full.
    #[arg(long)]
    pub update_policy: Option<UpdatePolicy>,
    /// topk or stochastic.
    #[arg(long)]
    pub selection: Option<SelectionMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Falls back to SWIFTLEARN_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// blobs, mixture or csv:<path>.
    #[arg(long)]
    pub dataset: Option<DatasetSpec>,
    /// Sample count for generated datasets.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Label column for csv datasets (default: last column).
    #[arg(long)]
    pub label_column: Option<usize>,
    /// The csv dataset has a header row.
    #[arg(long)]
    pub csv_header: bool,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// linear or mlp:<hidden>.
    #[arg(long)]
    pub model: Option<ModelSpec>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// batch or epoch-end.
    #[arg(long)]
    pub logit_capture: Option<LogitCapture>,
    #[arg(long, default_value = "swiftlearn-out")]
    pub out: PathBuf,
    /// Also write importance and subset CSVs next to the report.
    #[arg(long)]
    pub emit_importance: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', conflicts_with = "drop_ratios")]
    pub keep_ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub drop_ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub temperatures: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub reeval_intervals: Vec<ReevalInterval>,
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<UpdatePolicy>,
}

fn apply_kv(spec: &mut ExperimentSpec, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
        value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
    }
    if spec.sampler.apply_kv(key, value)? {
        return Ok(());
    }
    match key {
        "dataset" => spec.dataset = value.parse()?,
        "samples" => {
            let n = num(key, value)?;
            spec.dataset = spec.dataset.clone().with_samples(n);
        }
        "validation_fraction" => spec.validation_fraction = num(key, value)?,
        "model" => spec.model = value.parse()?,
        "lr" | "learning_rate" => spec.sgd.learning_rate = num(key, value)?,
        "batch_size" => spec.sgd.batch_size = num(key, value)?,
        "shuffle" => spec.sgd.shuffle = num(key, value)?,
        "logit_capture" => spec.logit_capture = value.parse()?,
        "label_column" => set_csv(spec, Some(num(key, value)?), None)?,
        "csv_header" => set_csv(spec, None, Some(num(key, value)?))?,
        other => return Err(format!("unknown key {other:?}")),
    }
    Ok(())
}

fn set_csv(
    spec: &mut ExperimentSpec,
    column: Option<usize>,
    header: Option<bool>,
) -> std::result::Result<(), String> {
    match &mut spec.dataset {
        DatasetSpec::Csv {
            label_column,
            has_header,
            ..
        } => {
            if column.is_some() {
                *label_column = column;
            }
            if let Some(h) = header {
                *has_header = h;
            }
            Ok(())
        }
        _ => Err("label_column and csv_header need a csv dataset".into()),
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn load_config_file(path: &Path, spec: &mut ExperimentSpec) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse(format!("expected key = value, got {line:?}")))?;
        apply_kv(spec, key.trim(), value.trim()).map_err(parse)?;
    }
    Ok(())
}

impl CommonArgs {
    /// Defaults, then the config file, then flags. The seed falls back to
    /// SWIFTLEARN_SEED when neither flag nor file sets it.
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        if let Ok(env_seed) = std::env::var(SEED_ENV) {
            spec.sampler.seed = env_seed
                .trim()
                .parse()
                .map_err(|_| Error::config("seed", env_seed.clone(), format!("{SEED_ENV} must be an unsigned integer")))?;
        }
        if let Some(path) = &self.config {
            load_config_file(path, &mut spec)?;
        }
        let s = &mut spec.sampler;
        if let Some(v) = self.keep_ratio {
            s.keep_ratio = v;
        }
        if let Some(v) = self.drop_ratio {
            s.set_drop_ratio(v);
        }
        if let Some(v) = self.temperature {
            s.temperature = v;
        }
        if let Some(v) = self.warmup_epochs {
            s.warmup_epochs = v;
        }
        if let Some(v) = self.reeval_interval {
            s.reeval_interval = v;
        }
        if let Some(v) = self.update_policy {
            s.update_policy = v;
        }
        if let Some(v) = self.selection {
            s.selection_mode = v;
        }
        if let Some(v) = self.epochs {
            s.total_epochs = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(d) = &self.dataset {
            spec.dataset = d.clone();
        }
        if let Some(n) = self.samples {
            spec.dataset = spec.dataset.clone().with_samples(n);
        }
        if self.label_column.is_some() || self.csv_header {
            set_csv(&mut spec, self.label_column, self.csv_header.then_some(true))
                .map_err(|reason| Error::config("dataset", spec.dataset.to_string(), reason))?;
        }
        if let Some(v) = self.validation_fraction {
            spec.validation_fraction = v;
        }
        if let Some(m) = self.model {
            spec.model = m;
        }
        if let Some(v) = self.lr {
            spec.sgd.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            spec.sgd.batch_size = v;
        }
        if let Some(v) = self.logit_capture {
            spec.logit_capture = v;
        }
        Ok(spec)
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run_command(args: &CommonArgs) -> Result<()> {
    let spec = args.to_spec()?;
    spec.sampler.clone().validate()?;
    let (report, _, treated) = run_experiment_detailed(&spec)?;
    create_out_dir(&args.out)?;
    if args.emit_importance {
        if let Some(table) = &treated.table {
            table.write_csv(args.out.join("importance.csv"))?;
        }
        write_subsets_csv(args.out.join("subsets.csv"), &treated.subsets)?;
    }
    let path = args.out.join("report.json");
    write_report(&report, &path)?;
    print!("{}", report.render_table());
    println!("report: {}", path.display());
    Ok(())
}

fn sweep_command(args: &SweepArgs) -> Result<()> {
    let template = args.common.to_spec()?;
    let keep_ratios = if args.drop_ratios.is_empty() {
        args.keep_ratios.clone()
    } else {
        args.drop_ratios.iter().map(|&d| keep_from_drop(d)).collect()
    };
    let grid = SweepGrid {
        keep_ratios,
        temperatures: args.temperatures.clone(),
        reeval_intervals: args.reeval_intervals.clone(),
        policies: args.policies.clone(),
    };
    let outcome = sweep(&template, &grid)?;
    create_out_dir(&args.common.out)?;
    for (i, report) in outcome.reports.iter().enumerate() {
        if let Ok(report) = report {
            write_report(report, args.common.out.join(format!("point-{i:03}.json")))?;
        }
    }
    let summary = args.common.out.join("summary.csv");
    write_summary_csv(&outcome.rows, &summary)?;
    println!(
        "{:<8} {:<7} {:<6} {:<8} {:>9} {:>9} {:>10} {:>10}  status",
        "r", "sigma", "K", "policy", "final_acc", "delta_pp", "step_x", "wall_x"
    );
    let cell = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
    for row in &outcome.rows {
        println!(
            "{:<8} {:<7} {:<6} {:<8} {:>9} {:>9} {:>10} {:>10}  {}",
            row.r,
            row.sigma,
            row.k,
            row.policy,
            cell(row.final_acc, 4),
            cell(row.delta_acc, 2),
            cell(row.step_speedup, 4),
            cell(row.wall_speedup, 3),
            row.status
        );
    }
    println!("summary: {}", summary.display());
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

/// Parses `args` and runs the command. Returns the process exit code; on
/// failure one JSON error line goes to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.to_string();
            let message = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", message));
            return 2;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Sweep(args) => sweep_command(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("swiftlearn").chain(args.iter().copied())).unwrap()
    }

    fn common(cli: Cli) -> CommonArgs {
        match cli.command {
            Command::Run(c) => c,
            Command::Sweep(s) => s.common,
        }
    }

    #[test]
    fn drop_ratio_flag_converts() {
        let spec = common(parse(&["run", "--drop-ratio", "0.9", "--seed", "4"])).to_spec().unwrap();
        assert!((spec.sampler.keep_ratio - 0.1).abs() < 1e-12);
        assert_eq!(spec.sampler.keep_ratio + spec.sampler.drop_ratio(), 1.0);
        assert_eq!(spec.sampler.seed, 4);
    }

    #[test]
    fn keep_and_drop_are_exclusive() {
        assert!(Cli::try_parse_from(["swiftlearn", "run", "--keep-ratio", "0.3", "--drop-ratio", "0.7"]).is_err());
    }

    #[test]
    fn parses_every_flag() {
        let spec = common(parse(&[
            "run",
            "--keep-ratio", "0.25",
            "--temperature", "2",
            "--warmup-epochs", "3",
            "--reeval-interval", "4",
            "--update-policy", "full",
            "--selection", "stochastic",
            "--epochs", "12",
            "--dataset", "mixture",
            "--samples", "500",
            "--model", "mlp:8",
            "--lr", "0.05",
            "--batch-size", "16",
            "--logit-capture", "epoch-end",
        ]))
        .to_spec()
        .unwrap();
        let s = &spec.sampler;
        assert_eq!(s.keep_ratio, 0.25);
        assert_eq!(s.temperature, 2.0);
        assert_eq!(s.warmup_epochs, 3);
        assert_eq!(s.reeval_interval, ReevalInterval::Every(4));
        assert_eq!(s.update_policy, UpdatePolicy::FullEveryK);
        assert_eq!(s.selection_mode, SelectionMode::StochasticWithoutReplacement);
        assert_eq!(s.total_epochs, 12);
        assert_eq!(spec.dataset, DatasetSpec::Mixture { n: 500 });
        assert_eq!(spec.model, ModelSpec::Mlp { hidden: 8 });
        assert_eq!(spec.sgd.learning_rate, 0.05);
        assert_eq!(spec.sgd.batch_size, 16);
        assert_eq!(spec.logit_capture, LogitCapture::EpochEnd);
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        fs::write(
            &path,
            "# experiment\ndrop_ratio = 0.7\nepochs = 6\nseed = 11\nmodel = mlp:4\nlr = 0.2 # inline\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let spec = common(parse(&["run", "--config", p, "--epochs", "8"])).to_spec().unwrap();
        assert!((spec.sampler.keep_ratio - 0.3).abs() < 1e-12);
        assert_eq!(spec.sampler.total_epochs, 8);
        assert_eq!(spec.sampler.seed, 11);
        assert_eq!(spec.model, ModelSpec::Mlp { hidden: 4 });
        assert_eq!(spec.sgd.learning_rate, 0.2);

        fs::write(&path, "epochs = 6\nbogus = 1\n").unwrap();
        let err = common(parse(&["run", "--config", p])).to_spec().unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn csv_dataset_flags() {
        let spec = common(parse(&["run", "--dataset", "csv:/tmp/x.csv", "--label-column", "0", "--csv-header"]))
            .to_spec()
            .unwrap();
        assert_eq!(
            spec.dataset,
            DatasetSpec::Csv {
                path: PathBuf::from("/tmp/x.csv"),
                label_column: Some(0),
                has_header: true
            }
        );
        assert!(common(parse(&["run", "--label-column", "0"])).to_spec().is_err());
    }

    #[test]
    fn sweep_lists() {
        let cli = parse(&["sweep", "--drop-ratios", "0,0.7,0.9", "--policies", "frozen,partial"]);
        match cli.command {
            Command::Sweep(s) => {
                assert_eq!(s.drop_ratios, vec![0.0, 0.7, 0.9]);
                assert_eq!(s.policies, vec![UpdatePolicy::Frozen, UpdatePolicy::PartialChosen]);
            }
            _ => panic!("expected sweep"),
        }
    }

    #[test]
    fn usage_errors_exit_nonzero() {
        assert_eq!(main_with_args(["swiftlearn", "run", "--update-policy", "sometimes"]), 2);
        assert_eq!(main_with_args(["swiftlearn", "fly"]), 2);
    }

    #[test]
    fn error_line_is_json() {
        let line = error_line("invalid_config", "keep_ratio = 1.3: must be in [0, 1]");
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"]["kind"], "invalid_config");
    }
}
