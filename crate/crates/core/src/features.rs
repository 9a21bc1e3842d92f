//! Engineered model inputs derived from a [`RegionSeries`]: the smoothed
//! infected proportion `a`, its day-over-day percent change `r` (the
//! "infection ratio"), SIR compartment columns and fractions, the
//! uninfected-population target `z`, normalized NPIs and cultural constants,
//! and fixed-length training windows.

use std::io::Write;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use epiforecast_nn::Supervised;

use crate::ingest::{NpiLevels, NpiSchema, RegionKey, RegionSeries, ResolvedCulture, CULTURE_DIMS, NPI_COUNT};

pub const SMOOTHING_WINDOW: usize = 7;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("population must be positive for `{0}`")]
    NonPositivePopulation(String),

    #[error("NPI level {level} of column {column} exceeds max {max}")]
    NpiOutOfRange { column: usize, level: u8, max: u8 },

    #[error("recovery days must be >= 1, got {0}")]
    RecoveryDays(f64),

    #[error("lookback must be >= 1")]
    Lookback,

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Average days from infection to removal.
    pub recovery_days: f64,
    pub lookback: usize,
    /// Divide NPI levels by their column maximum.
    pub normalize_npi: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            recovery_days: 14.0,
            lookback: 21,
            normalize_npi: true,
        }
    }
}

/// `nC / P`, clamped to 1. Returns the proportions and how many days needed
/// clamping.
pub fn infected_proportion(cases: &[u64], population: u64) -> (Vec<f64>, usize) {
    let p = population as f64;
    let mut clamped = 0;
    let out = cases
        .iter()
        .map(|&c| {
            let v = c as f64 / p;
            if v > 1.0 {
                clamped += 1;
                1.0
            } else {
                v
            }
        })
        .collect();
    if clamped > 0 {
        warn!("{clamped} days with more cases than population; clamped to 1");
    }
    (out, clamped)
}

/// Trailing 7-day mean; the first six days average over what is available.
pub fn moving_average_7(series: &[f64]) -> Vec<f64> {
    // summed per window rather than with a running total, which drifts
    (0..series.len())
        .map(|t| {
            let n = (t + 1).min(SMOOTHING_WINDOW);
            series[t + 1 - n..=t].iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// `r_{t+1} = (a_{t+1} - a_t) / a_t`, with `r_0 = 0` and `r = 0` (flagged)
/// wherever the previous proportion is zero.
pub fn percent_change(a: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut r = vec![0.0; a.len()];
    let mut flags = vec![false; a.len()];
    for t in 1..a.len() {
        if a[t - 1] > 0.0 {
            r[t] = (a[t] - a[t - 1]) / a[t - 1];
        } else {
            flags[t] = a[t] > 0.0;
        }
    }
    (r, flags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compartments {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirStep {
    pub state: Compartments,
    /// Some compartment went negative and was clamped to zero.
    pub clamped: bool,
}

/// One day of the compartment recurrence:
/// `S_t = S_{t-1} - newCases`, `I_t = I_{t-1} - I_{t-1}/d + newCases - newDeaths`,
/// `R_t = P - S_t - I_t`; negatives are clamped to zero.
pub fn sir_step(prev: Compartments, new_cases: f64, new_deaths: f64, population: f64, recovery_days: f64) -> SirStep {
    let mut s = prev.s - new_cases;
    let mut i = prev.i - prev.i / recovery_days + new_cases - new_deaths;
    let mut r = population - s - i;
    let mut clamped = false;
    for v in [&mut s, &mut i, &mut r] {
        if *v < 0.0 {
            *v = 0.0;
            clamped = true;
        }
    }
    SirStep {
        state: Compartments { s, i, r },
        clamped,
    }
}

/// Compartment counts for every day, starting from `S = P`, `I = R = 0`.
/// Returns the columns and the number of clamped days.
pub fn sir_columns(series: &RegionSeries, recovery_days: f64) -> Result<(Vec<Compartments>, usize), FeatureError> {
    if series.population == 0 {
        return Err(FeatureError::NonPositivePopulation(series.key.geo_id.clone()));
    }
    if !(recovery_days >= 1.0) {
        return Err(FeatureError::RecoveryDays(recovery_days));
    }
    let p = series.population as f64;
    let new_cases = series.daily_new_cases();
    let new_deaths = series.daily_new_deaths();
    let mut out = Vec::with_capacity(series.len());
    let mut clamped = 0;
    let mut state = Compartments { s: p, i: 0.0, r: 0.0 };
    for t in 0..series.len() {
        if t > 0 {
            let step = sir_step(state, new_cases[t], new_deaths[t], p, recovery_days);
            clamped += step.clamped as usize;
            state = step.state;
        }
        out.push(state);
    }
    Ok((out, clamped))
}

/// Compartments as population fractions, renormalized to sum to one.
pub fn fractions(c: Compartments, population: f64) -> [f64; 3] {
    let raw = [c.s / population, c.i / population, c.r / population];
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.map(|v| v / total)
    } else {
        [1.0, 0.0, 0.0]
    }
}

pub fn normalize_npi(levels: &NpiLevels, schema: &NpiSchema) -> Result<[f64; NPI_COUNT], FeatureError> {
    let mut out = [0.0; NPI_COUNT];
    for (i, (&level, &max)) in levels.iter().zip(schema.max_levels()).enumerate() {
        if level > max {
            return Err(FeatureError::NpiOutOfRange { column: i, level, max });
        }
        out[i] = level as f64 / max as f64;
    }
    Ok(out)
}

pub fn normalize_culture(c: &ResolvedCulture) -> [f64; CULTURE_DIMS] {
    c.profile.scores().map(|s| s / 100.0)
}

/// `z_t = MA7(newCases)_t / (P - MA7(nC)_{t-1})`, the share of the
/// not-yet-infected population infected on day t. `z_0 = 0`.
pub fn uninfected_ratio(new_cases: &[f64], cumulative: &[u64], population: u64) -> Vec<f64> {
    let p = population as f64;
    let smooth_new = moving_average_7(new_cases);
    let cum: Vec<f64> = cumulative.iter().map(|&c| (c as f64).min(p)).collect();
    let smooth_cum = moving_average_7(&cum);
    let mut z = vec![0.0; new_cases.len()];
    for t in 1..z.len() {
        let remaining = p - smooth_cum[t - 1];
        if remaining > 0.0 {
            z[t] = smooth_new[t] / remaining;
        }
    }
    z
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnomalies {
    pub proportion_clamped: usize,
    pub zero_denominator_ratios: usize,
    pub clamped_compartments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub key: RegionKey,
    pub population: u64,
    pub dates: Vec<NaiveDate>,
    /// Unsmoothed cumulative proportion `nC / P`.
    pub proportion: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub compartments: Vec<Compartments>,
    /// `(S_p, I_p, R_p)` per day.
    pub sir_fractions: Vec<[f64; 3]>,
    pub z: Vec<f64>,
    pub npi_norm: Vec<[f64; NPI_COUNT]>,
    pub culture_norm: [f64; CULTURE_DIMS],
    pub culture_imputed: bool,
    pub anomalies: FrameAnomalies,
}

impl FeatureFrame {
    pub fn build(
        series: &RegionSeries,
        schema: &NpiSchema,
        culture: &ResolvedCulture,
        cfg: &FeatureConfig,
    ) -> Result<Self, FeatureError> {
        if series.population == 0 {
            return Err(FeatureError::NonPositivePopulation(series.key.geo_id.clone()));
        }
        let p = series.population as f64;
        let (proportion, proportion_clamped) = infected_proportion(&series.confirmed_cases, series.population);
        let a = moving_average_7(&proportion);
        let (r, ratio_flags) = percent_change(&a);
        let (compartments, clamped_compartments) = sir_columns(series, cfg.recovery_days)?;
        let sir_fractions = compartments
            .iter()
            .enumerate()
            .map(|(t, c)| if t == 0 { [1.0, 0.0, 0.0] } else { fractions(*c, p) })
            .collect();
        let z = uninfected_ratio(&series.daily_new_cases(), &series.confirmed_cases, series.population);
        let npi_norm = series
            .npi
            .iter()
            .map(|levels| {
                if cfg.normalize_npi {
                    normalize_npi(levels, schema)
                } else {
                    Ok(levels.map(f64::from))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            key: series.key.clone(),
            population: series.population,
            dates: series.dates.clone(),
            proportion,
            a,
            r,
            compartments,
            sir_fractions,
            z,
            npi_norm,
            culture_norm: normalize_culture(culture),
            culture_imputed: culture.imputed,
            anomalies: FrameAnomalies {
                proportion_clamped,
                zero_denominator_ratios: ratio_flags.iter().filter(|&&f| f).count(),
                clamped_compartments,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Frame restricted to days strictly before `date`.
    pub fn truncate_before(&self, date: NaiveDate) -> FeatureFrame {
        let n = self.dates.iter().take_while(|&&d| d < date).count();
        let mut out = self.clone();
        out.dates.truncate(n);
        out.proportion.truncate(n);
        out.a.truncate(n);
        out.r.truncate(n);
        out.compartments.truncate(n);
        out.sir_fractions.truncate(n);
        out.z.truncate(n);
        out.npi_norm.truncate(n);
        out
    }

    /// Context channel values for day `t`.
    pub fn context_at(&self, kind: TargetKind, t: usize) -> Vec<f64> {
        match kind {
            TargetKind::Ratio => vec![self.r[t]],
            TargetKind::RatioSir => {
                let [s, i, r] = self.sir_fractions[t];
                vec![self.r[t], s, i, r]
            }
            TargetKind::Uninfected => vec![self.z[t]],
        }
    }

    /// Debug dump, one row per day.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "date", "geo_id", "proportion", "a", "r", "S", "I", "R", "S_p", "I_p", "R_p", "z",
        ]
        .map(String::from)
        .to_vec();
        header.extend((0..NPI_COUNT).map(|i| format!("npi_{i}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let c = self.compartments[t];
            let f = self.sir_fractions[t];
            let mut row = vec![
                self.dates[t].to_string(),
                self.key.geo_id.clone(),
                self.proportion[t].to_string(),
                self.a[t].to_string(),
                self.r[t].to_string(),
                c.s.to_string(),
                c.i.to_string(),
                c.r.to_string(),
                f[0].to_string(),
                f[1].to_string(),
                f[2].to_string(),
                self.z[t].to_string(),
            ];
            row.extend(self.npi_norm[t].iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Infection ratio only: one context channel, one output.
    Ratio,
    /// Infection ratio plus SIR fractions: four channels, four outputs.
    RatioSir,
    /// Uninfected-population infection share `z`: one channel, one output.
    Uninfected,
}

impl TargetKind {
    pub fn channels(self) -> usize {
        match self {
            TargetKind::Ratio | TargetKind::Uninfected => 1,
            TargetKind::RatioSir => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub geo_id: String,
    /// Date of the day being predicted.
    pub target_date: NaiveDate,
    pub lookback: usize,
    pub context_channels: usize,
    /// `lookback x context_channels`, row-major by day.
    pub context: Vec<f64>,
    /// `lookback x 12`, row-major by day.
    pub action: Vec<f64>,
    pub constants: [f64; CULTURE_DIMS],
    pub target: Vec<f64>,
}

impl WindowSample {
    /// Day-major concatenation of context and action, `lookback x (C + 12)`.
    pub fn joined_inputs(&self) -> Vec<f64> {
        let c = self.context_channels;
        let mut out = Vec::with_capacity(self.lookback * (c + NPI_COUNT));
        for t in 0..self.lookback {
            out.extend_from_slice(&self.context[t * c..(t + 1) * c]);
            out.extend_from_slice(&self.action[t * NPI_COUNT..(t + 1) * NPI_COUNT]);
        }
        out
    }

    pub fn input_width(&self) -> usize {
        self.context_channels + NPI_COUNT
    }

    pub fn is_finite(&self) -> bool {
        self.context
            .iter()
            .chain(&self.action)
            .chain(&self.constants)
            .chain(&self.target)
            .all(|v| v.is_finite())
    }
}

impl Supervised for WindowSample {
    fn target(&self) -> &[f64] {
        &self.target
    }
}

/// Target vector for day `t`.
pub fn target_at(frame: &FeatureFrame, kind: TargetKind, t: usize) -> Vec<f64> {
    frame.context_at(kind, t)
}

/// One sample per start day `s`: inputs from days `s..s+T`, target from day
/// `s+T`. Yields `max(0, len - T)` samples.
pub fn build_windows(frame: &FeatureFrame, lookback: usize, kind: TargetKind) -> Vec<WindowSample> {
    if lookback == 0 || frame.len() < lookback + 1 {
        warn!(
            "region {}: {} days is too short for lookback {lookback}",
            frame.key.geo_id,
            frame.len()
        );
        return Vec::new();
    }
    (0..frame.len() - lookback)
        .map(|s| {
            let end = s + lookback;
            WindowSample {
                geo_id: frame.key.geo_id.clone(),
                target_date: frame.dates[end],
                lookback,
                context_channels: kind.channels(),
                context: (s..end).flat_map(|t| frame.context_at(kind, t)).collect(),
                action: (s..end).flat_map(|t| frame.npi_norm[t]).collect(),
                constants: frame.culture_norm,
                target: target_at(frame, kind, end),
            }
        })
        .filter(|w| {
            let ok = w.is_finite();
            if !ok {
                warn!("dropping non-finite window for {} at {}", w.geo_id, w.target_date);
            }
            ok
        })
        .collect()
}
