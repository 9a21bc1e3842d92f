//! Multi-day rollout: each day's clipped prediction is fed back as the next
//! day's context input, and daily new-case counts are reconstructed from the
//! predicted smoothed proportion.

use std::io::{Read, Write};

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, FeatureError, FeatureFrame, TargetKind, WindowSample, SMOOTHING_WINDOW};
use crate::ingest::{NpiLevels, NpiSchema, NPI_COUNT};
use crate::models::{Model, ModelError, ModelKind};

pub const RATIO_CLIP: (f64, f64) = (0.0, 2.0);
pub const Z_CLIP: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("region `{geo_id}` has {got} days of history, need at least {need}")]
    HistoryTooShort { geo_id: String, got: usize, need: usize },

    #[error("history for `{geo_id}` ends on {last}, expected the day before {start}")]
    HistoryGap {
        geo_id: String,
        last: NaiveDate,
        start: NaiveDate,
    },

    #[error("NPI schedule has {got} days, horizon is {horizon}")]
    ScheduleLength { got: usize, horizon: usize },

    #[error("horizon must be at least 1")]
    EmptyHorizon,

    #[error("predictor returned {got} outputs, expected {expected}")]
    OutputWidth { expected: usize, got: usize },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Feature(#[from] FeatureError),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("forecast CSV line {line}: {message}")]
    BadRow { line: u64, message: String },
}

/// Anything that maps a window to the next day's outputs. Trained models
/// implement it; tests inject oracles and adversarial stubs.
pub trait Forecaster {
    fn kind(&self) -> ModelKind;
    fn lookback(&self) -> usize;
    fn predict_one(&self, sample: &WindowSample) -> Result<Vec<f64>, ForecastError>;
}

impl Forecaster for Model {
    fn kind(&self) -> ModelKind {
        Model::kind(self)
    }

    fn lookback(&self) -> usize {
        Model::lookback(self)
    }

    fn predict_one(&self, sample: &WindowSample) -> Result<Vec<f64>, ForecastError> {
        Ok(self
            .predict(std::slice::from_ref(sample))?
            .pop()
            .expect("one output row per sample"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRequest {
    pub geo_id: String,
    /// First predicted day.
    pub start: NaiveDate,
    pub horizon: usize,
    /// Planned NPIs for `start .. start + horizon`, already normalized.
    /// Day k's levels enter the input window of day k + 1.
    pub npi_schedule: Vec<[f64; NPI_COUNT]>,
}

impl ForecastRequest {
    pub fn from_levels(
        geo_id: &str,
        start: NaiveDate,
        levels: &[NpiLevels],
        schema: &NpiSchema,
        cfg: &FeatureConfig,
    ) -> Result<Self, ForecastError> {
        let npi_schedule = levels
            .iter()
            .map(|l| {
                if cfg.normalize_npi {
                    crate::features::normalize_npi(l, schema)
                } else {
                    Ok(l.map(f64::from))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            geo_id: geo_id.to_string(),
            start,
            horizon: levels.len(),
            npi_schedule,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayFlags {
    /// The primary output fell outside its clip range.
    pub clipped: bool,
    /// SIR fraction outputs were clipped or renormalized from a zero sum.
    pub fractions_clipped: bool,
    /// Reconstructed cumulative count would have decreased and was held.
    pub held: bool,
}

impl DayFlags {
    fn encode(&self) -> String {
        let mut parts = Vec::new();
        if self.clipped {
            parts.push("clipped");
        }
        if self.fractions_clipped {
            parts.push("fractions_clipped");
        }
        if self.held {
            parts.push("held");
        }
        parts.join(";")
    }

    fn decode(s: &str) -> Result<Self, String> {
        let mut f = DayFlags::default();
        for part in s.split(';').filter(|p| !p.is_empty()) {
            match part {
                "clipped" => f.clipped = true,
                "fractions_clipped" => f.fractions_clipped = true,
                "held" => f.held = true,
                other => return Err(format!("unknown flag `{other}`")),
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub geo_id: String,
    pub kind: ModelKind,
    pub population: u64,
    pub dates: Vec<NaiveDate>,
    /// Clipped ratio, or clipped `z` for the uninfected-share model.
    pub predicted_ratio: Vec<f64>,
    pub predicted_a: Vec<f64>,
    pub predicted_new_cases: Vec<f64>,
    pub cumulative_predicted_cases: Vec<f64>,
    /// `(S_p, I_p, R_p)` for models that emit them.
    pub sir_fractions: Option<Vec<[f64; 3]>>,
    pub flags: Vec<DayFlags>,
    /// Set when a non-finite output stopped the rollout early.
    pub aborted: bool,
}

impl ForecastResult {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// `a_{t+1} = min(1, a_t (1 + r))` and the smoothed new cases it implies.
pub fn ratio_to_cases(a: f64, ratio: f64, population: f64) -> (f64, f64) {
    let next = (a * (1.0 + ratio)).min(1.0);
    (next, (population * (next - a)).max(0.0))
}

/// `z (P - nC)`, limited to the people not yet infected.
pub fn z_to_cases(z: f64, cumulative: f64, population: f64) -> f64 {
    let remaining = (population - cumulative).max(0.0);
    (z * remaining).clamp(0.0, remaining)
}

fn clip(v: f64, (lo, hi): (f64, f64)) -> (f64, bool) {
    let c = v.clamp(lo, hi);
    (c, c != v)
}

/// Clips each fraction to `[0, 1]` and renormalizes to sum one; a zero sum
/// keeps `fallback`.
pub fn clip_fractions(raw: [f64; 3], fallback: [f64; 3]) -> ([f64; 3], bool) {
    let clipped = raw.map(|v| v.clamp(0.0, 1.0));
    let changed = clipped != raw;
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        (clipped.map(|v| v / total), changed)
    } else {
        (fallback, true)
    }
}

/// Rolls `model` forward from the end of `history` over `request.horizon`
/// days. History past `request.start` is ignored.
pub fn roll_forward<F: Forecaster + ?Sized>(
    model: &F,
    history: &FeatureFrame,
    request: &ForecastRequest,
) -> Result<ForecastResult, ForecastError> {
    if request.horizon == 0 {
        return Err(ForecastError::EmptyHorizon);
    }
    if request.npi_schedule.len() != request.horizon {
        return Err(ForecastError::ScheduleLength {
            got: request.npi_schedule.len(),
            horizon: request.horizon,
        });
    }
    let history = history.truncate_before(request.start);
    let lookback = model.lookback();
    let need = lookback.max(SMOOTHING_WINDOW);
    if history.len() < need {
        return Err(ForecastError::HistoryTooShort {
            geo_id: history.key.geo_id.clone(),
            got: history.len(),
            need,
        });
    }
    let last = *history.dates.last().expect("non-empty");
    if last.succ_opt() != Some(request.start) {
        return Err(ForecastError::HistoryGap {
            geo_id: history.key.geo_id.clone(),
            last,
            start: request.start,
        });
    }

    let kind = model.kind();
    let target = kind.target_kind();
    let io = kind.io_spec(lookback);
    let population = history.population as f64;
    let n = history.len();
    let mut context: Vec<Vec<f64>> = (n - lookback..n).map(|t| history.context_at(target, t)).collect();
    let mut actions: Vec<[f64; NPI_COUNT]> = history.npi_norm[n - lookback..].to_vec();
    let mut proportions: Vec<f64> = history.proportion[n - (SMOOTHING_WINDOW - 1)..].to_vec();
    let mut a = history.a[n - 1];
    let mut fractions = history.sir_fractions[n - 1];

    let mut out = ForecastResult {
        geo_id: history.key.geo_id.clone(),
        kind,
        population: history.population,
        dates: Vec::with_capacity(request.horizon),
        predicted_ratio: Vec::with_capacity(request.horizon),
        predicted_a: Vec::with_capacity(request.horizon),
        predicted_new_cases: Vec::with_capacity(request.horizon),
        cumulative_predicted_cases: Vec::with_capacity(request.horizon),
        sir_fractions: (target == TargetKind::RatioSir).then(Vec::new),
        flags: Vec::with_capacity(request.horizon),
        aborted: false,
    };

    for k in 0..request.horizon {
        let date = request.start + chrono::Days::new(k as u64);
        let sample = WindowSample {
            geo_id: history.key.geo_id.clone(),
            target_date: date,
            lookback,
            context_channels: io.context,
            context: context.iter().flatten().copied().collect(),
            action: actions.iter().flatten().copied().collect(),
            constants: history.culture_norm,
            target: vec![0.0; io.outputs],
        };
        let raw = model.predict_one(&sample)?;
        if raw.len() != io.outputs {
            return Err(ForecastError::OutputWidth {
                expected: io.outputs,
                got: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            warn!("{}: non-finite prediction on {date}; rollout stopped", out.geo_id);
            out.aborted = true;
            break;
        }
        let mut flags = DayFlags::default();
        let (value, next_a, next_context) = match target {
            TargetKind::Ratio | TargetKind::RatioSir => {
                let (r, clipped) = clip(raw[0], RATIO_CLIP);
                flags.clipped = clipped;
                let (next_a, _) = ratio_to_cases(a, r, population);
                let mut ctx = vec![r];
                if target == TargetKind::RatioSir {
                    let (f, changed) = clip_fractions([raw[1], raw[2], raw[3]], fractions);
                    flags.fractions_clipped = changed;
                    fractions = f;
                    ctx.extend(f);
                }
                (r, next_a, ctx)
            }
            TargetKind::Uninfected => {
                let (z, clipped) = clip(raw[0], Z_CLIP);
                flags.clipped = clipped;
                let new = z_to_cases(z, a * population, population);
                (z, (a + new / population).min(1.0), vec![z])
            }
        };

        // invert the trailing 7-day mean to recover the raw proportion
        let prev = *proportions.last().expect("six trailing days");
        let implied = SMOOTHING_WINDOW as f64 * next_a - proportions.iter().sum::<f64>();
        let p = implied.clamp(prev, 1.0);
        flags.held = implied < prev;
        proportions.remove(0);
        proportions.push(p);

        out.dates.push(date);
        out.predicted_ratio.push(value);
        out.predicted_a.push(next_a);
        out.predicted_new_cases.push(population * (p - prev));
        out.cumulative_predicted_cases.push(population * p);
        if let Some(f) = out.sir_fractions.as_mut() {
            f.push(fractions);
        }
        out.flags.push(flags);

        a = next_a;
        context.remove(0);
        context.push(next_context);
        actions.remove(0);
        actions.push(request.npi_schedule[k]);
    }
    Ok(out)
}

pub const FORECAST_HEADER: [&str; 6] = [
    "date",
    "geo_id",
    "predicted_ratio",
    "predicted_new_cases",
    "cumulative_predicted_cases",
    "flags",
];

pub fn write_forecast_csv<'a, W: Write>(
    results: impl IntoIterator<Item = &'a ForecastResult>,
    out: W,
) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FORECAST_HEADER)?;
    for r in results {
        for t in 0..r.len() {
            w.write_record([
                r.dates[t].to_string(),
                r.geo_id.clone(),
                r.predicted_ratio[t].to_string(),
                r.predicted_new_cases[t].to_string(),
                r.cumulative_predicted_cases[t].to_string(),
                r.flags[t].encode(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub date: NaiveDate,
    pub geo_id: String,
    pub predicted_ratio: f64,
    pub predicted_new_cases: f64,
    pub cumulative_predicted_cases: f64,
    pub flags: DayFlags,
}

pub fn read_forecast_csv<R: Read>(input: R) -> Result<Vec<ForecastRow>, ForecastError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != FORECAST_HEADER {
        return Err(ForecastError::BadRow {
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| ForecastError::BadRow { line, message };
        let num = |i: usize| -> Result<f64, ForecastError> {
            rec[i].parse().map_err(|_| bad(format!("bad number `{}`", &rec[i])))
        };
        rows.push(ForecastRow {
            date: crate::ingest::parse_date(&rec[0]).ok_or_else(|| bad(format!("bad date `{}`", &rec[0])))?,
            geo_id: rec[1].to_string(),
            predicted_ratio: num(2)?,
            predicted_new_cases: num(3)?,
            cumulative_predicted_cases: num(4)?,
            flags: DayFlags::decode(&rec[5]).map_err(bad)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CultureTable, RegionKey, RegionSeries};
    use crate::models::ModelHyper;

    #[test]
    fn ratio_to_cases_examples() {
        let (a, n) = ratio_to_cases(0.05, 0.1, 1e6);
        assert!((a - 0.055).abs() < 1e-15);
        assert!((n - 5000.0).abs() < 1e-6);
        assert_eq!(ratio_to_cases(0.05, 0.0, 1e6), (0.05, 0.0));
        let (a, n) = ratio_to_cases(0.9, 0.2, 1e6);
        assert_eq!(a, 1.0);
        assert!((n - 0.1 * 1e6).abs() < 1e-6);
    }

    #[test]
    fn z_to_cases_examples() {
        assert_eq!(z_to_cases(0.0, 1e5, 1e6), 0.0);
        assert!((z_to_cases(0.01, 1e5, 1e6) - 9000.0).abs() < 1e-9);
        assert_eq!(z_to_cases(0.5, 1e6, 1e6), 0.0);
    }

    #[test]
    fn fraction_clipping() {
        let (f, changed) = clip_fractions([1.2, -0.1, 0.3], [1.0, 0.0, 0.0]);
        assert!(changed);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(f[1], 0.0);
        let (f, _) = clip_fractions([-1.0, -1.0, -1.0], [0.9, 0.1, 0.0]);
        assert_eq!(f, [0.9, 0.1, 0.0]);
    }

    struct Constant(ModelKind, Vec<f64>);

    impl Forecaster for Constant {
        fn kind(&self) -> ModelKind {
            self.0
        }
        fn lookback(&self) -> usize {
            21
        }
        fn predict_one(&self, _: &WindowSample) -> Result<Vec<f64>, ForecastError> {
            Ok(self.1.clone())
        }
    }

    fn history(days: usize) -> FeatureFrame {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let s = RegionSeries {
            key: RegionKey::new("Aland", None),
            population: 1_000_000,
            dates: (0..days).map(|d| start + chrono::Days::new(d as u64)).collect(),
            confirmed_cases: (0..days as u64).map(|t| 100 + 20 * t).collect(),
            confirmed_deaths: vec![0; days],
            npi: vec![[0; NPI_COUNT]; days],
        };
        let c = CultureTable::default().resolve(&s.key);
        FeatureFrame::build(&s, &NpiSchema::default(), &c, &FeatureConfig::default()).unwrap()
    }

    fn request(h: &FeatureFrame, horizon: usize) -> ForecastRequest {
        ForecastRequest {
            geo_id: h.key.geo_id.clone(),
            start: h.dates.last().unwrap().succ_opt().unwrap(),
            horizon,
            npi_schedule: vec![[0.5; NPI_COUNT]; horizon],
        }
    }

    #[test]
    fn clipping_bounds_the_stored_ratio() {
        let h = history(40);
        let res = roll_forward(&Constant(ModelKind::LstmBaseline, vec![5.0]), &h, &request(&h, 30)).unwrap();
        assert!(res.predicted_ratio.iter().all(|&r| r == 2.0));
        assert!(res.flags.iter().all(|f| f.clipped));
        assert!(res.cumulative_predicted_cases.windows(2).all(|w| w[1] >= w[0]));
        assert!(*res.cumulative_predicted_cases.last().unwrap() <= 1e6);
    }

    #[test]
    fn zero_output_holds_the_curve() {
        let h = history(40);
        let res = roll_forward(&Constant(ModelKind::LstmBaseline, vec![0.0]), &h, &request(&h, 60)).unwrap();
        assert_eq!(res.len(), 60);
        assert!(res.predicted_ratio.iter().all(|&r| r == 0.0));
        assert!(res.predicted_a.iter().all(|&a| a == *h.a.last().unwrap()));
    }

    #[test]
    fn zero_weight_model_predicts_zero_ratio() {
        let h = history(40);
        let mut m = Model::build_lstm_baseline(&ModelHyper::default(), 0).unwrap();
        m.params_mut().zero_values();
        let res = roll_forward(&m, &h, &request(&h, 60)).unwrap();
        assert!(res.predicted_ratio.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn horizon_one_is_single_forward_pass() {
        let h = history(40);
        let m = Model::build_lstm_cultd_sir(&ModelHyper::default(), 4).unwrap();
        let req = request(&h, 1);
        let res = roll_forward(&m, &h, &req).unwrap();
        let n = h.len();
        let sample = WindowSample {
            geo_id: h.key.geo_id.clone(),
            target_date: req.start,
            lookback: 21,
            context_channels: 4,
            context: (n - 21..n).flat_map(|t| h.context_at(TargetKind::RatioSir, t)).collect(),
            action: h.npi_norm[n - 21..].iter().flatten().copied().collect(),
            constants: h.culture_norm,
            target: vec![0.0; 4],
        };
        let raw = m.predict(&[sample]).unwrap()[0][0];
        assert_eq!(res.predicted_ratio[0], raw.clamp(0.0, 2.0));
        let f = res.sir_fractions.as_ref().unwrap()[0];
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prefix_consistency() {
        let h = history(40);
        let m = Model::build_transenc_cultd_sir(&ModelHyper::default(), 8).unwrap();
        let long = roll_forward(&m, &h, &request(&h, 25)).unwrap();
        let short = roll_forward(&m, &h, &request(&h, 10)).unwrap();
        assert_eq!(long.predicted_ratio[..10], short.predicted_ratio[..]);
        assert_eq!(long.cumulative_predicted_cases[..10], short.cumulative_predicted_cases[..]);
    }

    #[test]
    fn short_history_and_gap_are_rejected() {
        let h = history(15);
        assert!(matches!(
            roll_forward(&Constant(ModelKind::LstmBaseline, vec![0.0]), &h, &request(&h, 3)),
            Err(ForecastError::HistoryTooShort { .. })
        ));
        let h = history(40);
        let mut req = request(&h, 3);
        req.start = req.start + chrono::Days::new(2);
        assert!(matches!(
            roll_forward(&Constant(ModelKind::LstmBaseline, vec![0.0]), &h, &req),
            Err(ForecastError::HistoryGap { .. })
        ));
    }

    #[test]
    fn non_finite_output_aborts_with_partial_result() {
        let h = history(40);
        let res = roll_forward(&Constant(ModelKind::LstmBaseline, vec![f64::NAN]), &h, &request(&h, 5)).unwrap();
        assert!(res.aborted);
        assert!(res.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let h = history(40);
        let res = roll_forward(&Constant(ModelKind::LstmUtCogn, vec![0.001]), &h, &request(&h, 30)).unwrap();
        let mut buf = Vec::new();
        write_forecast_csv([&res], &mut buf).unwrap();
        let rows = read_forecast_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 30);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.date, res.dates[t]);
            assert_eq!(row.predicted_new_cases, res.predicted_new_cases[t]);
            assert_eq!(row.flags, res.flags[t]);
        }
    }
}
