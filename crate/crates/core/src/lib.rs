//! Forecast reconciliation for hierarchical wind-farm power series.
//!
//! The crate covers ingestion and aggregation of turbine panels, base
//! forecasts, cross-sectional and cross-temporal reconciliation, and
//! rolling-origin evaluation.

pub mod base_forecast;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod hierarchy;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod reconcile_cs;
pub mod reconcile_ct;

pub use error::{Error, Result};
