//! Scoring with the cumulative 7-day-moving-average MAE per 100k people,
//! error buckets, the two date-split experiments, and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use epiforecast_nn::{train, EpochRecord, SplitMode, TrainConfig, TrainError, TrainOutcome, TrainingSet};

use crate::features::{build_windows, target_at, FeatureConfig, FeatureError, FeatureFrame, WindowSample, SMOOTHING_WINDOW};
use crate::forecast::{roll_forward, ForecastError, ForecastRequest, ForecastResult, ForecastRow, Forecaster};
use crate::ingest::{date_slice, Dataset, IngestError, RegionKey};
use crate::models::{Model, ModelError, ModelHyper, ModelKind};

pub const PER_100K: f64 = 100_000.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predicted and actual series differ in length ({predicted} vs {actual})")]
    LengthMismatch { predicted: usize, actual: usize },

    #[error("population must be positive")]
    Population,

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error("no region could be scored")]
    NothingScored,

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error(transparent)]
    Feature(#[from] FeatureError),

    #[error(transparent)]
    Forecast(#[from] ForecastError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("I/O error at {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Trailing 7-day mean of `series`, where the windows of the first days
/// reach back into `history` (values immediately preceding `series`) and
/// are shortened only when history runs out.
pub fn seven_day_average(series: &[f64], history: &[f64]) -> Vec<f64> {
    let keep = history.len().min(SMOOTHING_WINDOW - 1);
    let joined: Vec<f64> = history[history.len() - keep..].iter().chain(series).copied().collect();
    (0..series.len())
        .map(|d| {
            let end = keep + d;
            let start = (end + 1).saturating_sub(SMOOTHING_WINDOW);
            joined[start..=end].iter().sum::<f64>() / (end + 1 - start) as f64
        })
        .collect()
}

/// Per-day `|7DMA(actual) - 7DMA(predicted)| * 100000 / P`. Both averages
/// draw their head windows from the actual `history`.
pub fn daily_errors_per_100k(
    predicted: &[f64],
    actual: &[f64],
    history: &[f64],
    population: f64,
) -> Result<Vec<f64>, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if !(population > 0.0) {
        return Err(EvalError::Population);
    }
    let p = seven_day_average(predicted, history);
    let a = seven_day_average(actual, history);
    Ok(p.iter().zip(&a).map(|(p, a)| (a - p).abs() * PER_100K / population).collect())
}

/// Cumul-7DMA-MAE-per-100K over the evaluation days. Pass an empty
/// `history` for shortened head windows.
pub fn cumul_7dma_mae_per_100k(
    predicted: &[f64],
    actual: &[f64],
    history: &[f64],
    population: f64,
) -> Result<f64, EvalError> {
    Ok(daily_errors_per_100k(predicted, actual, history, population)?.iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Green,
    Yellow,
    Orange,
    Red,
}

impl Bucket {
    pub fn name(self) -> &'static str {
        match self {
            Bucket::Green => "green",
            Bucket::Yellow => "yellow",
            Bucket::Orange => "orange",
            Bucket::Red => "red",
        }
    }
}

pub const GREEN_BELOW: f64 = 2000.0;
pub const YELLOW_BELOW: f64 = 5000.0;
pub const RED_FROM: f64 = 8000.0;

/// Right-open buckets: `[0, 2000)`, `[2000, 5000)`, `[5000, 8000)`, `[8000, inf)`.
pub fn bucket(score: f64) -> Bucket {
    if score < GREEN_BELOW {
        Bucket::Green
    } else if score < YELLOW_BELOW {
        Bucket::Yellow
    } else if score < RED_FROM {
        Bucket::Orange
    } else {
        Bucket::Red
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadWindows {
    /// Reach back into actual history before the evaluation range.
    #[default]
    Trailing,
    /// Use only evaluation days, shortening the first windows.
    Shortened,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub eval_start: NaiveDate,
    pub eval_end: NaiveDate,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub train: TrainConfig,
    pub hyper: ModelHyper,
    pub features: FeatureConfig,
    pub head_windows: HeadWindows,
    /// Score only country-level rows (no region name).
    pub country_only: bool,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::e2020()
    }
}

impl ExperimentConfig {
    /// Train January to July 2020, evaluate August to December 2020.
    pub fn e2020() -> Self {
        Self {
            name: "e2020".into(),
            train_start: ymd(2020, 1, 1),
            train_end: ymd(2020, 7, 31),
            eval_start: ymd(2020, 8, 1),
            eval_end: ymd(2020, 12, 31),
            models: ModelKind::ALL.to_vec(),
            seed: 0,
            train: TrainConfig::default(),
            hyper: ModelHyper::default(),
            features: FeatureConfig::default(),
            head_windows: HeadWindows::Trailing,
            country_only: false,
        }
    }

    /// Train on all of 2020, evaluate January to April 2021.
    pub fn e2021() -> Self {
        Self {
            name: "e2021".into(),
            train_start: ymd(2020, 1, 1),
            train_end: ymd(2020, 12, 31),
            eval_start: ymd(2021, 1, 1),
            eval_end: ymd(2021, 4, 30),
            ..Self::e2020()
        }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "e2020" => Some(Self::e2020()),
            "e2021" => Some(Self::e2021()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.train_start > self.train_end || self.eval_start > self.eval_end {
            return Err(EvalError::Config("range start after end".into()));
        }
        if self.eval_start <= self.train_end {
            return Err(EvalError::Config(format!(
                "evaluation starts {} but training runs to {}",
                self.eval_start, self.train_end
            )));
        }
        if self.models.is_empty() {
            return Err(EvalError::Config("no models requested".into()));
        }
        Ok(())
    }

    pub fn eval_days(&self) -> usize {
        (self.eval_end - self.eval_start).num_days() as usize + 1
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub key: RegionKey,
    pub score: f64,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMean {
    pub date: NaiveDate,
    pub predicted: f64,
    pub actual: f64,
    /// Mean running sum of the per-day error up to this date.
    pub cumulative_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRegion {
    pub geo_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: ModelKind,
    pub experiment: String,
    pub eval_start: NaiveDate,
    pub eval_end: NaiveDate,
    /// Keyed by geo id.
    pub per_region: BTreeMap<String, RegionScore>,
    /// Unweighted mean over scored regions.
    pub aggregate: f64,
    pub daily: Vec<DailyMean>,
    pub skipped: Vec<SkippedRegion>,
    /// Regions whose rollout stopped on a non-finite prediction.
    pub aborted: Vec<String>,
}

impl MetricReport {
    pub fn bucket_counts(&self) -> BTreeMap<Bucket, usize> {
        let mut out = BTreeMap::new();
        for s in self.per_region.values() {
            *out.entry(s.bucket).or_insert(0) += 1;
        }
        out
    }
}

/// Per-region frames over `[train_start, end]`.
fn frames_until(dataset: &Dataset, cfg: &ExperimentConfig, end: NaiveDate) -> Result<BTreeMap<String, FeatureFrame>, EvalError> {
    let sliced = date_slice(dataset, cfg.train_start, end)?;
    sliced
        .regions
        .iter()
        .map(|(id, series)| {
            let culture = dataset.culture.resolve(&series.key);
            Ok((id.clone(), FeatureFrame::build(series, &dataset.schema, &culture, &cfg.features)?))
        })
        .collect()
}

/// Training windows for `kind`, grouped per region in date order. Every
/// window (inputs and target) lies inside the training range.
pub fn training_windows(dataset: &Dataset, cfg: &ExperimentConfig, kind: ModelKind) -> Result<Vec<Vec<WindowSample>>, EvalError> {
    let frames = frames_until(dataset, cfg, cfg.train_end)?;
    let groups: Vec<Vec<WindowSample>> = frames
        .values()
        .map(|f| build_windows(f, cfg.hyper.lookback, kind.target_kind()))
        .filter(|g| !g.is_empty())
        .collect();
    debug_assert!(groups.iter().flatten().all(|w| w.target_date <= cfg.train_end));
    Ok(groups)
}

/// Rolls `forecaster` through the evaluation range for every eligible region
/// using the recorded NPIs, and scores the result.
pub fn evaluate_forecaster<F: Forecaster + ?Sized>(
    forecaster: &F,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<(MetricReport, Vec<ForecastResult>), EvalError> {
    cfg.validate()?;
    let history_end = cfg.eval_start.pred_opt().expect("date in range");
    let histories = frames_until(dataset, cfg, history_end)?;
    let days = cfg.eval_days();
    let mut per_region = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut aborted = Vec::new();
    let mut results = Vec::new();
    let mut curves: Vec<Curve> = Vec::new();

    for (geo_id, series) in &dataset.regions {
        let skip = |reason: String| SkippedRegion {
            geo_id: geo_id.clone(),
            reason,
        };
        if cfg.country_only && !series.key.is_country() {
            continue;
        }
        let (Some(history), Some(start_idx)) = (histories.get(geo_id), series.index_of(cfg.eval_start)) else {
            skipped.push(skip("no data on both sides of the evaluation start".into()));
            continue;
        };
        if series.index_of(cfg.eval_end).is_none() {
            skipped.push(skip(format!("data ends before {}", cfg.eval_end)));
            continue;
        }
        let schedule = &series.npi[start_idx..start_idx + days];
        let request = ForecastRequest::from_levels(geo_id, cfg.eval_start, schedule, &dataset.schema, &cfg.features)?;
        let result = match roll_forward(forecaster, history, &request) {
            Ok(r) => r,
            Err(e @ (ForecastError::HistoryTooShort { .. } | ForecastError::HistoryGap { .. })) => {
                skipped.push(skip(e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if result.aborted {
            aborted.push(geo_id.clone());
            skipped.push(skip("rollout produced a non-finite prediction".into()));
            results.push(result);
            continue;
        }
        let daily = series.daily_new_cases();
        let actual = &daily[start_idx..start_idx + days];
        let history_days = head_history(&daily, start_idx, cfg.head_windows);
        let population = series.population as f64;
        let errors = daily_errors_per_100k(&result.predicted_new_cases, actual, history_days, population)?;
        let score: f64 = errors.iter().sum();
        curves.push((
            seven_day_average(&result.predicted_new_cases, history_days),
            seven_day_average(actual, history_days),
            errors,
        ));
        per_region.insert(
            geo_id.clone(),
            RegionScore {
                key: series.key.clone(),
                score,
                bucket: bucket(score),
            },
        );
        results.push(result);
    }

    let report = assemble_report(forecaster.kind(), cfg, per_region, curves, skipped, aborted)?;
    Ok((report, results))
}

type Curve = (Vec<f64>, Vec<f64>, Vec<f64>);

fn assemble_report(
    model: ModelKind,
    cfg: &ExperimentConfig,
    per_region: BTreeMap<String, RegionScore>,
    curves: Vec<Curve>,
    skipped: Vec<SkippedRegion>,
    aborted: Vec<String>,
) -> Result<MetricReport, EvalError> {
    if per_region.is_empty() {
        return Err(EvalError::NothingScored);
    }
    for s in &skipped {
        warn!("skipped {}: {}", s.geo_id, s.reason);
    }
    let days = cfg.eval_days();
    let n = curves.len() as f64;
    let mut running = vec![0.0; curves.len()];
    let daily = (0..days)
        .map(|d| {
            let mut pred = 0.0;
            let mut act = 0.0;
            for (k, (p, a, e)) in curves.iter().enumerate() {
                pred += p[d];
                act += a[d];
                running[k] += e[d];
            }
            DailyMean {
                date: cfg.eval_start + chrono::Days::new(d as u64),
                predicted: pred / n,
                actual: act / n,
                cumulative_mae: running.iter().sum::<f64>() / n,
            }
        })
        .collect();
    let aggregate = per_region.values().map(|s| s.score).sum::<f64>() / per_region.len() as f64;
    Ok(MetricReport {
        model,
        experiment: cfg.name.clone(),
        eval_start: cfg.eval_start,
        eval_end: cfg.eval_end,
        per_region,
        aggregate,
        daily,
        skipped,
        aborted,
    })
}

fn head_history(daily: &[f64], start_idx: usize, mode: HeadWindows) -> &[f64] {
    match mode {
        HeadWindows::Trailing => &daily[start_idx.saturating_sub(SMOOTHING_WINDOW - 1)..start_idx],
        HeadWindows::Shortened => &[],
    }
}

/// Scores previously written forecast rows (see
/// [`crate::forecast::write_forecast_csv`]) against the recorded cases.
/// A region is scored only if its rows cover the whole evaluation range.
pub fn score_forecast_rows(
    dataset: &Dataset,
    rows: &[ForecastRow],
    model: ModelKind,
    cfg: &ExperimentConfig,
) -> Result<MetricReport, EvalError> {
    cfg.validate()?;
    let days = cfg.eval_days();
    let mut by_region: BTreeMap<&str, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for r in rows {
        if (cfg.eval_start..=cfg.eval_end).contains(&r.date) {
            by_region.entry(&r.geo_id).or_default().insert(r.date, r.predicted_new_cases);
        }
    }
    let mut per_region = BTreeMap::new();
    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for (geo_id, predicted) in by_region {
        let skip = |reason: &str| SkippedRegion {
            geo_id: geo_id.to_string(),
            reason: reason.to_string(),
        };
        let Some(series) = dataset.region(geo_id) else {
            skipped.push(skip("not in dataset"));
            continue;
        };
        if predicted.len() != days {
            skipped.push(skip("forecast does not cover the evaluation range"));
            continue;
        }
        let (Some(start_idx), Some(_)) = (series.index_of(cfg.eval_start), series.index_of(cfg.eval_end)) else {
            skipped.push(skip("recorded data does not cover the evaluation range"));
            continue;
        };
        let daily = series.daily_new_cases();
        let actual = &daily[start_idx..start_idx + days];
        let history = head_history(&daily, start_idx, cfg.head_windows);
        let pred: Vec<f64> = predicted.into_values().collect();
        let errors = daily_errors_per_100k(&pred, actual, history, series.population as f64)?;
        let score: f64 = errors.iter().sum();
        curves.push((seven_day_average(&pred, history), seven_day_average(actual, history), errors));
        per_region.insert(
            geo_id.to_string(),
            RegionScore {
                key: series.key.clone(),
                score,
                bucket: bucket(score),
            },
        );
    }
    assemble_report(model, cfg, per_region, curves, skipped, Vec::new())
}

/// Replays the true next-day targets; a rollout driven by it reproduces
/// the recorded case curve.
pub struct PerfectOracle {
    kind: ModelKind,
    lookback: usize,
    frames: BTreeMap<String, FeatureFrame>,
}

impl PerfectOracle {
    pub fn new(dataset: &Dataset, cfg: &ExperimentConfig, kind: ModelKind) -> Result<Self, EvalError> {
        Ok(Self {
            kind,
            lookback: cfg.hyper.lookback,
            frames: frames_until(dataset, cfg, cfg.eval_end)?,
        })
    }
}

impl Forecaster for PerfectOracle {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn lookback(&self) -> usize {
        self.lookback
    }

    fn predict_one(&self, sample: &WindowSample) -> Result<Vec<f64>, ForecastError> {
        let frame = &self.frames[&sample.geo_id];
        let first = frame.dates[0];
        let t = (sample.target_date - first).num_days() as usize;
        Ok(target_at(frame, self.kind.target_kind(), t))
    }
}

#[derive(Debug, Clone)]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize },
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub kind: ModelKind,
    pub status: RunStatus,
    pub model: Option<Model>,
    pub training: Option<TrainOutcome>,
    /// Epoch history, kept even when training diverged.
    pub history: Vec<EpochRecord>,
    pub report: Option<MetricReport>,
    pub forecasts: Vec<ForecastResult>,
    /// Latest date any training window touched.
    pub last_training_date: Option<NaiveDate>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub runs: Vec<ModelRun>,
}

impl ExperimentOutcome {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| matches!(r.status, RunStatus::Completed))
    }
}

fn model_seed(base: u64, kind: ModelKind) -> u64 {
    let idx = ModelKind::ALL.iter().position(|&k| k == kind).expect("listed") as u64;
    base.wrapping_mul(31).wrapping_add(idx)
}

/// Trains and evaluates one model kind.
pub fn run_model(dataset: &Dataset, cfg: &ExperimentConfig, kind: ModelKind) -> ModelRun {
    run_model_inner(dataset, cfg, kind, true)
}

/// Trains one model kind on the training range without scoring it.
pub fn train_model(dataset: &Dataset, cfg: &ExperimentConfig, kind: ModelKind) -> ModelRun {
    run_model_inner(dataset, cfg, kind, false)
}

fn run_model_inner(dataset: &Dataset, cfg: &ExperimentConfig, kind: ModelKind, evaluate: bool) -> ModelRun {
    let mut run = ModelRun {
        kind,
        status: RunStatus::Completed,
        model: None,
        training: None,
        history: Vec::new(),
        report: None,
        forecasts: Vec::new(),
        last_training_date: None,
    };
    let result = (|| -> Result<(), EvalError> {
        let groups = training_windows(dataset, cfg, kind)?;
        run.last_training_date = groups.iter().flatten().map(|w| w.target_date).max();
        let tc = cfg.train_config();
        let data = match tc.split {
            SplitMode::Chronological => TrainingSet::chronological(groups, tc.val_fraction),
            SplitMode::Random => TrainingSet::random(groups.into_iter().flatten().collect(), tc.val_fraction, tc.seed),
        };
        let mut model = Model::build(kind, &cfg.hyper, model_seed(cfg.seed, kind))?;
        info!("{kind}: {} training / {} validation windows", data.train.len(), data.validation.len());
        match train(&mut model, &data, &tc) {
            Ok(outcome) => {
                info!(
                    "{kind}: best epoch {} (val {:.6}, initial {:.6})",
                    outcome.best_epoch, outcome.best_val_loss, outcome.initial_val_loss
                );
                run.history = outcome.history.clone();
                run.training = Some(outcome);
            }
            Err(TrainError::Diverged { epoch, history }) => {
                run.history = history;
                run.status = RunStatus::Diverged { epoch };
                return Ok(());
            }
            Err(e) => return Err(EvalError::Config(e.to_string())),
        }
        if !evaluate {
            run.model = Some(model);
            return Ok(());
        }
        let (report, forecasts) = evaluate_forecaster(&model, dataset, cfg)?;
        run.report = Some(report);
        run.forecasts = forecasts;
        run.model = Some(model);
        Ok(())
    })();
    if let Err(e) = result {
        run.status = RunStatus::Failed(e.to_string());
    }
    run
}

/// Trains every requested model on the pooled training range (one thread per
/// model) and scores each on the evaluation range.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentOutcome, EvalError> {
    cfg.validate()?;
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .models
            .iter()
            .map(|&kind| scope.spawn(move || run_model(dataset, cfg, kind)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        runs,
    })
}

pub const REPORT_FILES: [&str; 4] = ["daily_mean_curve.csv", "cumulative_mae.csv", "region_buckets.csv", "summary.json"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))
}

#[derive(Serialize)]
struct Summary<'a> {
    model: ModelKind,
    experiment: &'a str,
    eval_start: NaiveDate,
    eval_end: NaiveDate,
    regions_scored: usize,
    aggregate_cumul_7dma_mae_per_100k: f64,
    buckets: BTreeMap<&'static str, usize>,
    skipped: &'a [SkippedRegion],
    aborted: &'a [String],
}

/// Writes the four report files into `dir` (created if needed).
///
/// - `daily_mean_curve.csv`: `date,mean_predicted_7dma,mean_actual_7dma`
/// - `cumulative_mae.csv`: `date,mean_cumulative_mae_per_100k`
/// - `region_buckets.csv`: `geo_id,country_name,region_name,score,bucket`
/// - `summary.json`: aggregate score, bucket counts, skipped regions
pub fn emit_report(report: &MetricReport, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let curve = csv_bytes(
        &["date", "mean_predicted_7dma", "mean_actual_7dma"],
        report
            .daily
            .iter()
            .map(|d| vec![d.date.to_string(), d.predicted.to_string(), d.actual.to_string()]),
    )?;
    write_file(&dir.join(REPORT_FILES[0]), &curve)?;
    let cumulative = csv_bytes(
        &["date", "mean_cumulative_mae_per_100k"],
        report
            .daily
            .iter()
            .map(|d| vec![d.date.to_string(), d.cumulative_mae.to_string()]),
    )?;
    write_file(&dir.join(REPORT_FILES[1]), &cumulative)?;
    let buckets = csv_bytes(
        &["geo_id", "country_name", "region_name", "score", "bucket"],
        report.per_region.iter().map(|(id, s)| {
            vec![
                id.clone(),
                s.key.country_name.clone(),
                s.key.region_name.clone().unwrap_or_default(),
                s.score.to_string(),
                s.bucket.name().to_string(),
            ]
        }),
    )?;
    write_file(&dir.join(REPORT_FILES[2]), &buckets)?;
    let summary = Summary {
        model: report.model,
        experiment: &report.experiment,
        eval_start: report.eval_start,
        eval_end: report.eval_end,
        regions_scored: report.per_region.len(),
        aggregate_cumul_7dma_mae_per_100k: report.aggregate,
        buckets: report.bucket_counts().into_iter().map(|(b, n)| (b.name(), n)).collect(),
        skipped: &report.skipped,
        aborted: &report.aborted,
    };
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    write_file(&dir.join(REPORT_FILES[3]), &json)
}
