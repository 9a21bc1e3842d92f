//! `epiforecast` command-line tool: ingest OxCGRT-format data, build
//! features, train the four forecasters, roll forecasts forward and score
//! them.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{Days, NaiveDate};
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use thiserror::Error;

use epiforecast::evaluation::{
    emit_report, run_experiment, score_forecast_rows, train_model, ModelRun, RunStatus, REPORT_FILES,
};
use epiforecast::forecast::{read_forecast_csv, write_forecast_csv};
use epiforecast::ingest::{
    date_slice, load_cultural, parse_oxcgrt, read_snapshot, write_cultural, write_oxcgrt, write_snapshot, CultureTable,
    NpiLevels,
};
use epiforecast::sir::synthetic_dataset;
use epiforecast::{roll_forward, Dataset, FeatureFrame, ForecastRequest, Model, ModelKind};

use config::{parse_day, parse_models, ModelList, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    csv::Error,
    serde_json::Error,
    epiforecast::ingest::IngestError,
    epiforecast::features::FeatureError,
    epiforecast::forecast::ForecastError,
    epiforecast::models::ModelError,
    epiforecast::evaluation::EvalError,
    epiforecast::sir::SirError
);

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "epiforecast", version, about = "Case-count forecasting from intervention data")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated model kinds.
    #[arg(long, global = true, value_parser = parse_models)]
    models: Option<ModelList>,

    /// Date-split preset: e2020 or e2021.
    #[arg(long, global = true)]
    experiment: Option<String>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an OxCGRT-format CSV (and optional culture table) into a dataset snapshot.
    Ingest {
        /// Overrides `paths.data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `paths.culture`.
        #[arg(long)]
        culture: Option<PathBuf>,
    },
    /// Write per-region feature tables derived from the snapshot.
    Featurize {
        #[arg(long)]
        region: Option<String>,
    },
    /// Train the selected models on the training range.
    Train,
    /// Roll one trained model forward for one region.
    Forecast {
        /// Model kind; defaults to the only entry of `--models`.
        #[arg(long)]
        model: Option<String>,
        /// Checkpoint file; defaults to the checkpoint directory entry for the model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        region: String,
        #[arg(long)]
        horizon: usize,
        /// First forecast day; defaults to the evaluation start.
        #[arg(long, value_parser = parse_day)]
        start: Option<NaiveDate>,
    },
    /// Train and score every selected model, writing all report files.
    Experiment,
    /// Score a forecast CSV against the snapshot over the evaluation range.
    Report {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        model: String,
    },
    /// Write a synthetic OxCGRT-format dataset and culture table.
    Synth {
        #[arg(long, default_value_t = 8)]
        regions: usize,
        #[arg(long, default_value_t = 486)]
        days: usize,
        #[arg(long, value_parser = parse_day, default_value = "2020-01-01")]
        start: NaiveDate,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EPIFORECAST_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap already maps help/version to 0 and bad usage to 2
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.global.seed,
        models: cli.global.models.clone().map(|m| m.0),
        experiment: cli.global.experiment.clone(),
        out: cli.global.out.clone(),
    })?;
    if let Command::Ingest { data, culture } = &cli.command {
        if data.is_some() {
            cfg.paths.data = data.clone();
        }
        if culture.is_some() {
            cfg.paths.culture = culture.clone();
        }
    }
    info!("resolved config:\n{}", cfg.to_toml());

    match cli.command {
        Command::Ingest { .. } => cmd_ingest(&cfg),
        Command::Featurize { region } => cmd_featurize(&cfg, region.as_deref()),
        Command::Train => cmd_train(&cfg),
        Command::Forecast {
            model,
            checkpoint,
            region,
            horizon,
            start,
        } => {
            let kind = resolve_single_model(&cfg, model.as_deref())?;
            cmd_forecast(&cfg, kind, checkpoint.as_deref(), &region, horizon, start)
        }
        Command::Experiment => cmd_experiment(&cfg),
        Command::Report { forecasts, model } => {
            let kind = resolve_single_model(&cfg, Some(&model))?;
            cmd_report(&cfg, kind, &forecasts)
        }
        Command::Synth { regions, days, start } => cmd_synth(&cfg, regions, days, start),
    }
}

fn resolve_single_model(cfg: &RunConfig, flag: Option<&str>) -> Result<ModelKind> {
    match flag {
        Some(name) => name.parse().map_err(|e: epiforecast::models::ModelError| CliError::Usage(e.to_string())),
        None => match cfg.experiment.models.as_slice() {
            [one] => Ok(*one),
            _ => Err(CliError::Usage("pass --model or exactly one entry in --models".into())),
        },
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn open_input(path: &Path, what: &str) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot open {what} {}: {e}", path.display())))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.paths.snapshot();
    let file = fs::File::open(&path).map_err(|e| {
        CliError::Usage(format!("cannot open snapshot {} ({e}); run `epiforecast ingest` first", path.display()))
    })?;
    Ok(read_snapshot(std::io::BufReader::new(file))?)
}

fn cmd_synth(cfg: &RunConfig, regions: usize, days: usize, start: NaiveDate) -> Result<()> {
    let ds = synthetic_dataset(regions, start, days, cfg.experiment.seed)?;
    let mut data = Vec::new();
    write_oxcgrt(ds.regions.values(), &ds.schema, &mut data)?;
    let mut culture = Vec::new();
    write_cultural(&ds.culture, &mut culture)?;
    let data_path = cfg.paths.out.join("synthetic.csv");
    let culture_path = cfg.paths.out.join("culture.csv");
    write_atomic(&data_path, &data)?;
    write_atomic(&culture_path, &culture)?;
    eprintln!(
        "wrote {} regions x {days} days to {} and {}",
        ds.regions.len(),
        data_path.display(),
        culture_path.display()
    );
    Ok(())
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let data = cfg
        .paths
        .data
        .as_deref()
        .ok_or_else(|| CliError::Usage("no data file: set paths.data or pass --data".into()))?;
    let input = open_input(data, "data file")?;
    let culture = match &cfg.paths.culture {
        Some(p) => load_cultural(open_input(p, "culture table")?)?,
        None => {
            warn!("no culture table given; every region gets neutral scores");
            CultureTable::default()
        }
    };
    let schema = epiforecast::ingest::NpiSchema::default();
    let mut outcome = parse_oxcgrt(std::io::BufReader::new(input), &schema, &cfg.columns)?;
    outcome.dataset.culture = culture;
    let r = &outcome.report;
    for e in &r.row_errors {
        warn!("line {}: {}", e.line, e.message);
    }
    info!(
        "{} rows read, {} days filled, {} decreases repaired, {} NPI values clamped, {} duplicate dates",
        r.rows_read, r.filled_days, r.repaired_decreases, r.clamped_npi, r.duplicate_dates
    );
    let mut bytes = Vec::new();
    write_snapshot(&outcome.dataset, &mut bytes)?;
    let path = cfg.paths.snapshot();
    write_atomic(&path, &bytes)?;
    eprintln!(
        "{} regions retained, {} dropped; snapshot at {}",
        outcome.dataset.regions.len(),
        r.dropped_regions.len(),
        path.display()
    );
    Ok(())
}

fn cmd_featurize(cfg: &RunConfig, region: Option<&str>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let ids: Vec<&String> = match region {
        Some(id) => vec![ds.regions.get_key_value(id).map(|(k, _)| k).ok_or_else(|| unknown_region(&ds, id))?],
        None => ds.regions.keys().collect(),
    };
    let dir = cfg.paths.out.join("features");
    for id in ids {
        let series = &ds.regions[id];
        let culture = ds.culture.resolve(&series.key);
        let frame = FeatureFrame::build(series, &ds.schema, &culture, &cfg.experiment.features)?;
        let mut bytes = Vec::new();
        frame.write_csv(&mut bytes)?;
        write_atomic(&dir.join(format!("{id}.csv")), &bytes)?;
    }
    eprintln!("feature tables written to {}", dir.display());
    Ok(())
}

fn unknown_region(ds: &Dataset, id: &str) -> CliError {
    let known: Vec<&str> = ds.regions.keys().map(String::as_str).collect();
    CliError::Usage(format!("region `{id}` not in snapshot; available: {}", known.join(", ")))
}

fn history_csv(run: &ModelRun) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for h in &run.history {
        w.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string()])?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    model.save(&mut bytes)?;
    write_atomic(path, &bytes)
}

fn status_line(run: &ModelRun) -> String {
    match &run.status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Diverged { epoch } => format!("diverged at epoch {epoch}"),
        RunStatus::Failed(why) => format!("failed: {why}"),
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let exp = &cfg.experiment;
    let mut failures = Vec::new();
    for &kind in &exp.models {
        let run = train_model(&ds, exp, kind);
        let history_path = cfg.paths.out.join(kind.name()).join("history.csv");
        write_atomic(&history_path, &history_csv(&run)?)?;
        match (&run.status, &run.model, &run.training) {
            (RunStatus::Completed, Some(model), Some(t)) => {
                let path = cfg.paths.checkpoint(kind);
                save_model(model, &path)?;
                info!(
                    "{kind}: best validation epoch {} of {} (L1 {:.6}); checkpoint {}",
                    t.best_epoch,
                    t.history.len(),
                    t.best_val_loss,
                    path.display()
                );
            }
            _ => {
                error!("{kind}: {}; history kept at {}", status_line(&run), history_path.display());
                failures.push(kind);
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("training did not complete for {failures:?}")))
    }
}

fn cmd_forecast(
    cfg: &RunConfig,
    kind: ModelKind,
    checkpoint: Option<&Path>,
    region: &str,
    horizon: usize,
    start: Option<NaiveDate>,
) -> Result<()> {
    if horizon == 0 {
        return Err(CliError::Usage("--horizon must be at least 1".into()));
    }
    let ds = load_dataset(cfg)?;
    let series = ds.region(region).ok_or_else(|| unknown_region(&ds, region))?;
    let ckpt_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.checkpoint(kind));
    let model = Model::load(std::io::BufReader::new(open_input(&ckpt_path, "checkpoint")?))?;
    if model.kind() != kind {
        return Err(CliError::Usage(format!(
            "checkpoint {} holds {}, not {kind}",
            ckpt_path.display(),
            model.kind()
        )));
    }
    let exp = &cfg.experiment;
    let start = start.unwrap_or(exp.eval_start);
    let history_end = start
        .pred_opt()
        .ok_or_else(|| CliError::Usage("start date out of range".into()))?;
    let sliced = date_slice(&ds, exp.train_start, history_end)?;
    let history_series = sliced
        .region(region)
        .ok_or_else(|| CliError::Usage(format!("no history for {region} before {start}")))?;
    let culture = ds.culture.resolve(&series.key);
    let history = FeatureFrame::build(history_series, &ds.schema, &culture, &exp.features)?;

    // recorded NPIs where available, then the last recorded levels held
    let last = *series.npi.last().expect("validated series is non-empty");
    let levels: Vec<NpiLevels> = (0..horizon as u64)
        .map(|d| {
            let day = start + Days::new(d);
            series.index_of(day).map_or(last, |i| series.npi[i])
        })
        .collect();
    if series.index_of(start + Days::new(horizon as u64 - 1)).is_none() {
        info!("NPI schedule holds the last recorded levels past {}", series.last_date().unwrap());
    }
    let request = ForecastRequest::from_levels(region, start, &levels, &ds.schema, &exp.features)?;
    let result = roll_forward(&model, &history, &request)?;
    if result.aborted {
        warn!("rollout stopped after {} days on a non-finite prediction", result.len());
    }
    let mut bytes = Vec::new();
    write_forecast_csv([&result], &mut bytes)?;
    let path = cfg.paths.out.join(format!("forecast_{kind}_{region}.csv"));
    write_atomic(&path, &bytes)?;
    eprintln!("{} forecast days written to {}", result.len(), path.display());
    if result.aborted {
        return Err(CliError::Runtime("forecast aborted on a non-finite prediction".into()));
    }
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let outcome = run_experiment(&ds, &cfg.experiment)?;
    let mut status = serde_json::Map::new();
    for run in &outcome.runs {
        let dir = cfg.paths.out.join(run.kind.name());
        write_atomic(&dir.join("history.csv"), &history_csv(run)?)?;
        if let Some(model) = &run.model {
            save_model(model, &dir.join("checkpoint.json"))?;
        }
        if !run.forecasts.is_empty() {
            let mut bytes = Vec::new();
            write_forecast_csv(&run.forecasts, &mut bytes)?;
            write_atomic(&dir.join("forecasts.csv"), &bytes)?;
        }
        if let Some(report) = &run.report {
            emit_report(report, &dir)?;
            let counts = report.bucket_counts();
            info!(
                "{}: aggregate {:.1} per 100k over {} regions; buckets {:?}",
                run.kind,
                report.aggregate,
                report.per_region.len(),
                counts
            );
        }
        let line = status_line(run);
        if !matches!(run.status, RunStatus::Completed) {
            error!("{}: {line}", run.kind);
            write_atomic(&dir.join("FAILED"), format!("{line}\n").as_bytes())?;
        }
        status.insert(run.kind.name().to_string(), line.into());
    }
    let summary = serde_json::json!({
        "experiment": cfg.experiment.name,
        "complete": outcome.all_completed(),
        "models": status,
        "report_files": REPORT_FILES,
    });
    write_atomic(
        &cfg.paths.out.join("experiment.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    if outcome.all_completed() {
        eprintln!("experiment {} complete; reports under {}", cfg.experiment.name, cfg.paths.out.display());
        Ok(())
    } else {
        Err(CliError::Runtime("some models did not complete; partial artifacts are marked FAILED".into()))
    }
}

fn cmd_report(cfg: &RunConfig, kind: ModelKind, forecasts: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let rows = read_forecast_csv(std::io::BufReader::new(open_input(forecasts, "forecast file")?))?;
    let report = score_forecast_rows(&ds, &rows, kind, &cfg.experiment)?;
    let dir = cfg.paths.out.join(kind.name());
    emit_report(&report, &dir)?;
    eprintln!(
        "{} regions scored, aggregate {:.1} per 100k; reports in {}",
        report.per_region.len(),
        report.aggregate,
        dir.display()
    );
    Ok(())
}
