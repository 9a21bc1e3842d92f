//! Forecasting COVID-19 case trajectories from intervention plans.
//!
//! The pipeline runs `ingest` (OxCGRT-style CSV to validated region series),
//! `features` (smoothed proportions, infection ratio, SIR fractions,
//! windows), `models` (four LSTM/transformer predictors), `forecast`
//! (clipped multi-day rollout) and `evaluation` (per-100k error scoring and
//! experiment reports). `sir` provides the compartment ODE and a synthetic
//! data generator.

pub mod evaluation;
pub mod features;
pub mod forecast;
pub mod ingest;
pub mod models;
pub mod sir;

pub use evaluation::{ExperimentConfig, MetricReport};
pub use features::{FeatureConfig, FeatureFrame, TargetKind, WindowSample};
pub use forecast::{roll_forward, ForecastRequest, ForecastResult, Forecaster};
pub use ingest::{Dataset, RegionKey, RegionSeries};
pub use models::{Model, ModelHyper, ModelKind};
