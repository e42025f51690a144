use std::path::Path;
use std::process::{Command, Output};

use swiftlearn::harness::strip_wall_clock;

fn swiftlearn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swiftlearn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SWIFTLEARN_SEED")
        .output()
        .unwrap()
}

fn report_without_wall_clock(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    strip_wall_clock(&mut value);
    serde_json::to_string_pretty(&value).unwrap()
}

const SMALL: &[&str] = &["run", "--dataset", "mixture", "--samples", "200", "--model", "mlp:4", "--epochs", "5", "--drop-ratio", "0.7", "--seed", "9"];

#[test]
fn run_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(swiftlearn(SMALL, &a).status.success());
    assert!(swiftlearn(SMALL, &b).status.success());
    assert_eq!(report_without_wall_clock(&a), report_without_wall_clock(&b));
}

#[test]
fn run_prints_table_and_emits_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL.to_vec();
    args.push("--emit-importance");
    let out = swiftlearn(&args, dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("speedup: step"), "{stdout}");
    let importance = std::fs::read_to_string(dir.path().join("importance.csv")).unwrap();
    assert!(importance.starts_with("sample_id,score,probability,computed_at_epoch\n"));
    assert_eq!(importance.lines().count(), 161);
    let subsets = std::fs::read_to_string(dir.path().join("subsets.csv")).unwrap();
    assert!(subsets.starts_with("epoch,sample_id\n"));
    // 2 warm-up epochs of 160 plus 3 sampled epochs of ceil(0.3 * 160) = 48.
    assert_eq!(subsets.lines().count(), 1 + 2 * 160 + 3 * 48);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_swiftlearn"))
        .args(["run", "--epochs", "3", "--samples", "40", "--out"])
        .arg(dir.path())
        .env("SWIFTLEARN_SEED", "1234")
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["sampler"]["seed"], 1234);
}

#[test]
fn invalid_config_fails_with_error_line_and_no_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = swiftlearn(&["run", "--warmup-epochs", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(line["error"]["kind"], "invalid_config");
    assert!(line["error"]["message"].as_str().unwrap().contains("warmup_epochs = 1"));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn missing_csv_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = swiftlearn(&["run", "--dataset", "csv:/no/such/file.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("\"kind\":\"io\""), "{stderr}");
}

#[test]
fn csv_dataset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut text = String::from("x,y,label\n");
    for i in 0..60 {
        let label = i % 2;
        let x = if label == 1 { 3.0 } else { -3.0 } + (i as f64) * 0.01;
        text.push_str(&format!("{x},{},{}\n", (i as f64).sin(), label));
    }
    std::fs::write(&path, text).unwrap();
    let dataset = format!("csv:{}", path.display());
    let out = swiftlearn(
        &["run", "--dataset", &dataset, "--csv-header", "--epochs", "4", "--keep-ratio", "0.5"],
        &dir.path().join("out"),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_reports_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = swiftlearn(
        &["sweep", "--samples", "100", "--epochs", "4", "--drop-ratios", "0,0.7,0.9"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        assert!(dir.path().join(format!("point-{i:03}.json")).exists());
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn help_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_swiftlearn")).arg("--help").output().unwrap();
    assert!(out.status.success());
}
