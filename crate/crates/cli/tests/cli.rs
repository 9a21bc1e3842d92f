use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_epiforecast");

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Synthetic data covering 2020, ingested, with a short training config.
    fn new(train_end: &str, eval_start: &str, eval_end: &str, max_epochs: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = format!(
            r#"
# fixture configuration
[paths]
out = "{out}"

[experiment]
name = "fixture"
train_start = "2020-01-01"
train_end = "{train_end}"
eval_start = "{eval_start}"
eval_end = "{eval_end}"
seed = 5

[experiment.train]
max_epochs = {max_epochs}
"#,
            out = dir.path().join("out").display(),
        );
        fs::write(dir.path().join("run.toml"), config).unwrap();
        let ws = Self { dir };
        let o = ws.run(&["synth", "--regions", "3", "--days", "366"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let data = ws.out().join("synthetic.csv");
        let culture = ws.out().join("culture.csv");
        let o = ws.run(&[
            "ingest",
            "--data",
            data.to_str().unwrap(),
            "--culture",
            culture.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        ws
    }

    fn small() -> Self {
        Self::new("2020-03-31", "2020-04-01", "2020-04-30", 5)
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .args(args)
            .env("EPIFORECAST_LOG", "warn")
            .output()
            .unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn ingest_reports_and_is_repeatable() {
    let ws = Workspace::small();
    let snapshot = ws.out().join("dataset.json");
    let first = fs::read(&snapshot).unwrap();
    let data = ws.out().join("synthetic.csv");
    let culture = ws.out().join("culture.csv");
    let o = ws.run(&[
        "ingest",
        "--data",
        data.to_str().unwrap(),
        "--culture",
        culture.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("3 regions retained, 0 dropped"), "{}", stderr(&o));
    assert_eq!(fs::read(&snapshot).unwrap(), first);
}

#[test]
fn ingest_of_missing_file_fails_without_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = Command::new(BIN)
        .args(["ingest", "--data"])
        .arg(dir.path().join("absent.csv"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!out.join("dataset.json").exists());
}

#[test]
fn train_writes_checkpoint_and_history_deterministically() {
    let ws = Workspace::small();
    let o = ws.run(&["train", "--models", "lstm-baseline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = ws.out().join("checkpoints/lstm-baseline.json");
    let first = fs::read(&ckpt).unwrap();
    let history = data_rows(&ws.out().join("lstm-baseline/history.csv"));
    assert!((1..=5).contains(&history), "{history} history rows");

    let o = ws.run(&["train", "--models", "lstm-baseline"]);
    assert!(o.status.success());
    assert_eq!(fs::read(&ckpt).unwrap(), first);
}

#[test]
fn unknown_model_is_a_usage_error() {
    let ws = Workspace::small();
    let o = ws.run(&["train", "--models", "lstm-enormous"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn forecast_rows_and_rescoring() {
    let ws = Workspace::small();
    assert!(ws.run(&["train", "--models", "lstm-ut-cogn"]).status.success());
    let o = ws.run(&[
        "forecast",
        "--model",
        "lstm-ut-cogn",
        "--region",
        "Synthland 01",
        "--horizon",
        "30",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = ws.out().join("forecast_lstm-ut-cogn_Synthland 01.csv");
    assert_eq!(data_rows(&csv), 30);

    let o = ws.run(&["report", "--model", "lstm-ut-cogn", "--forecasts", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let buckets = fs::read_to_string(ws.out().join("lstm-ut-cogn/region_buckets.csv")).unwrap();
    assert!(buckets.contains("Synthland 01"));
}

#[test]
fn forecast_for_unknown_region_lists_available() {
    let ws = Workspace::small();
    assert!(ws.run(&["train", "--models", "lstm-baseline"]).status.success());
    let o = ws.run(&["forecast", "--model", "lstm-baseline", "--region", "Atlantis", "--horizon", "5"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("Synthland 00") && err.contains("Synthland 02"), "{err}");
}

#[test]
fn experiment_preset_writes_all_reports() {
    let ws = Workspace::small();
    let o = ws.run(&["experiment", "--experiment", "e2020", "--models", "lstm-cultd-sir"]);
    // the fixture data ends on 2020-12-31, which covers the E2020 range
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["daily_mean_curve.csv", "cumulative_mae.csv", "region_buckets.csv", "summary.json"] {
        assert!(ws.out().join("lstm-cultd-sir").join(f).exists(), "{f} missing");
    }
    let daily = data_rows(&ws.out().join("lstm-cultd-sir/daily_mean_curve.csv"));
    assert_eq!(daily, 153);
}

#[test]
fn experiment_covers_exactly_the_selected_models() {
    let ws = Workspace::small();
    let o = ws.run(&["experiment", "--models", "lstm-baseline,transenc-cultd-sir"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut dirs: Vec<String> = fs::read_dir(ws.out())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("summary.json").exists())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["lstm-baseline", "transenc-cultd-sir"]);
}

#[test]
fn failed_training_exits_nonzero_and_flags_artifacts() {
    // ten training days cannot fill a single 21-day window
    let ws = Workspace::new("2020-01-10", "2020-01-11", "2020-02-10", 5);
    let o = ws.run(&["experiment", "--models", "lstm-baseline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(ws.out().join("lstm-baseline/FAILED").exists());
    let status = fs::read_to_string(ws.out().join("experiment.json")).unwrap();
    assert!(status.contains("\"complete\": false"), "{status}");
}
