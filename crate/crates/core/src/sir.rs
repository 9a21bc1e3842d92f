//! Parametric SIR dynamics and a synthetic OxCGRT-style region generator.
//!
//! `S' = -a S I`, `I' = a S I - b I`, `R' = b I`. The generator scales the
//! transmission rate down as NPI stringency rises, so the case curves it
//! produces respond to the intervention schedule.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    CulturalProfile, CultureTable, Dataset, NpiLevels, NpiSchema, RegionKey, RegionSeries, CULTURE_DIMS, NPI_COUNT,
};

#[derive(Debug, Error)]
pub enum SirError {
    #[error("non-finite state at step {0}")]
    NonFinite(usize),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("synthetic region needs at least {min} days, got {got}")]
    TooShort { min: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    /// Transmission rate.
    pub alpha: f64,
    /// Removal rate per day.
    pub beta: f64,
}

impl SirParams {
    pub fn validate(&self) -> Result<(), SirError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(SirError::InvalidParams(format!("alpha={}, beta={}", self.alpha, self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

impl SirState {
    pub fn total(&self) -> f64 {
        self.s + self.i + self.r
    }

    fn is_finite(&self) -> bool {
        self.s.is_finite() && self.i.is_finite() && self.r.is_finite()
    }
}

pub fn derivative(state: SirState, params: SirParams) -> SirState {
    let infection = params.alpha * state.s * state.i;
    let removal = params.beta * state.i;
    SirState {
        s: -infection,
        i: infection - removal,
        r: removal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `steps + 1` states, starting with the initial one.
    pub states: Vec<SirState>,
    /// Steps at which a flow was limited to keep compartments non-negative.
    pub clamped_steps: Vec<usize>,
}

/// Moves `infection` from S to I and `removal` from I to R, limiting each
/// flow to what its source holds. Moving flows (rather than adding
/// derivatives per compartment) keeps the total exact up to rounding.
fn apply_flows(state: SirState, infection: f64, removal: f64) -> (SirState, bool) {
    let inf = infection.clamp(0.0, state.s);
    let rem = removal.clamp(0.0, state.i + inf);
    let clamped = inf != infection || rem != removal;
    (
        SirState {
            s: state.s - inf,
            i: state.i + inf - rem,
            r: state.r + rem,
        },
        clamped,
    )
}

fn step(state: SirState, params: SirParams, dt: f64, integrator: Integrator) -> (SirState, bool) {
    let flows = |x: SirState| (params.alpha * x.s * x.i, params.beta * x.i);
    match integrator {
        Integrator::Euler => {
            let (inf, rem) = flows(state);
            apply_flows(state, inf * dt, rem * dt)
        }
        Integrator::Rk4 => {
            let at = |x: SirState, inf: f64, rem: f64, h: f64| SirState {
                s: x.s - inf * h,
                i: x.i + (inf - rem) * h,
                r: x.r + rem * h,
            };
            let k1 = flows(state);
            let k2 = flows(at(state, k1.0, k1.1, dt / 2.0));
            let k3 = flows(at(state, k2.0, k2.1, dt / 2.0));
            let k4 = flows(at(state, k3.0, k3.1, dt));
            let inf = (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0) / 6.0;
            let rem = (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) / 6.0;
            apply_flows(state, inf * dt, rem * dt)
        }
    }
}

pub fn simulate(
    initial: SirState,
    params: SirParams,
    steps: usize,
    dt: f64,
    integrator: Integrator,
) -> Result<Trajectory, SirError> {
    params.validate()?;
    if !(dt > 0.0) || steps == 0 {
        return Err(SirError::InvalidParams(format!("dt={dt}, steps={steps}")));
    }
    if !initial.is_finite() {
        return Err(SirError::NonFinite(0));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut clamped_steps = Vec::new();
    states.push(initial);
    let mut state = initial;
    for k in 1..=steps {
        let (next, clamped) = step(state, params, dt, integrator);
        if !next.is_finite() {
            return Err(SirError::NonFinite(k));
        }
        if clamped {
            clamped_steps.push(k);
        }
        states.push(next);
        state = next;
    }
    Ok(Trajectory { states, clamped_steps })
}

pub const MIN_SYNTH_DAYS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Initially infected fraction of the population.
    pub initial_infected: f64,
    pub fatality_fraction: f64,
    /// Relative amplitude of multiplicative noise on daily new cases.
    pub noise: f64,
    /// Integration substeps per day.
    pub substeps: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            initial_infected: 1e-4,
            fatality_fraction: 0.01,
            noise: 0.0,
            substeps: 4,
            seed: 0,
        }
    }
}

/// `base * prod_i effect_i ^ (level_i / max_i)`.
pub fn effective_alpha(base: f64, levels: &NpiLevels, schema: &NpiSchema, effects: &[f64; NPI_COUNT]) -> f64 {
    levels
        .iter()
        .zip(schema.max_levels())
        .zip(effects)
        .fold(base, |acc, ((&l, &m), &e)| acc * e.powf(l as f64 / m as f64))
}

/// Fixed characteristics of one synthetic region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub key: RegionKey,
    pub start: NaiveDate,
    pub base: SirParams,
    /// Per-NPI multiplier on the transmission rate at maximum level.
    pub effects: [f64; NPI_COUNT],
    pub population: u64,
}

/// Generates one region whose daily transmission rate follows `schedule`.
/// Works on population fractions and converts to counts at the end.
pub fn synthesize_region(
    spec: &RegionSpec,
    schedule: &[NpiLevels],
    schema: &NpiSchema,
    cfg: &SynthConfig,
) -> Result<RegionSeries, SirError> {
    let RegionSpec {
        key,
        start,
        base,
        effects,
        population,
    } = spec.clone();
    base.validate()?;
    if schedule.len() < MIN_SYNTH_DAYS {
        return Err(SirError::TooShort {
            min: MIN_SYNTH_DAYS,
            got: schedule.len(),
        });
    }
    if effects.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(SirError::InvalidParams("effect multipliers must be in (0, 1]".into()));
    }
    if population == 0 || cfg.substeps == 0 {
        return Err(SirError::InvalidParams("population and substeps must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = population as f64;
    let i0 = cfg.initial_infected.clamp(0.0, 1.0);
    let mut state = SirState {
        s: 1.0 - i0,
        i: i0,
        r: 0.0,
    };
    let dt = 1.0 / cfg.substeps as f64;
    let mut cumulative = i0 * p;
    let mut cases = Vec::with_capacity(schedule.len());
    let mut deaths = Vec::with_capacity(schedule.len());
    for (t, levels) in schedule.iter().enumerate() {
        if t > 0 {
            let params = SirParams {
                alpha: effective_alpha(base.alpha, levels, schema, &effects),
                beta: base.beta,
            };
            let before = state.s;
            for _ in 0..cfg.substeps {
                state = step(state, params, dt, Integrator::Euler).0;
            }
            if !state.is_finite() {
                return Err(SirError::NonFinite(t));
            }
            let factor = 1.0 + cfg.noise * rng.random_range(-1.0..=1.0);
            cumulative = (cumulative + (before - state.s) * p * factor.max(0.0)).min(p);
        }
        let c = cumulative.round() as u64;
        cases.push(c);
        deaths.push((c as f64 * cfg.fatality_fraction).round() as u64);
    }
    if cases.last() == Some(&0) {
        warn!("synthetic region {} produced no infections", key.geo_id);
    }
    Ok(RegionSeries {
        key,
        population,
        dates: (0..schedule.len())
            .map(|d| start + chrono::Days::new(d as u64))
            .collect(),
        confirmed_cases: cases,
        confirmed_deaths: deaths,
        npi: schedule.to_vec(),
    })
}

/// Piecewise-constant random schedule: each column changes level at random
/// intervals of one to six weeks.
pub fn random_schedule(days: usize, schema: &NpiSchema, rng: &mut impl Rng) -> Vec<NpiLevels> {
    let mut out = vec![[0u8; NPI_COUNT]; days];
    for (col, &max) in schema.max_levels().iter().enumerate() {
        let mut t = 0;
        while t < days {
            let level = rng.random_range(0..=max);
            let len = rng.random_range(7..=42);
            for day in out.iter_mut().skip(t).take(len) {
                day[col] = level;
            }
            t += len;
        }
    }
    out
}

/// `n_regions` independent synthetic countries with random schedules,
/// populations, transmission rates and cultural profiles.
pub fn synthetic_dataset(n_regions: usize, start: NaiveDate, days: usize, seed: u64) -> Result<Dataset, SirError> {
    let schema = NpiSchema::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regions = BTreeMap::new();
    let mut profiles = BTreeMap::new();
    for k in 0..n_regions {
        let country = format!("Synthland {k:02}");
        let key = RegionKey::new(&country, None);
        let schedule = random_schedule(days, &schema, &mut rng);
        let base = SirParams {
            alpha: rng.random_range(0.18..0.35),
            beta: rng.random_range(0.07..0.12),
        };
        let mut effects = [1.0; NPI_COUNT];
        for e in effects.iter_mut() {
            *e = rng.random_range(0.85..0.97);
        }
        let population = rng.random_range(200_000..5_000_000u64);
        let cfg = SynthConfig {
            initial_infected: rng.random_range(2e-5..2e-4),
            noise: 0.05,
            seed: rng.random(),
            ..SynthConfig::default()
        };
        let spec = RegionSpec {
            key,
            start,
            base,
            effects,
            population,
        };
        let series = synthesize_region(&spec, &schedule, &schema, &cfg)?;
        regions.insert(series.key.geo_id.clone(), series);
        let mut scores = [0.0; CULTURE_DIMS];
        for s in scores.iter_mut() {
            *s = rng.random_range(0..=100) as f64;
        }
        profiles.insert(country, CulturalProfile::new(scores).expect("scores in range"));
    }
    let culture = if profiles.is_empty() {
        CultureTable::default()
    } else {
        CultureTable::from_profiles(profiles).expect("non-empty")
    };
    Ok(Dataset {
        schema,
        regions,
        culture,
    })
}
