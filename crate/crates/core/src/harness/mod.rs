//! Experiment runner: scenarios, the estimation pipeline, metrics, sweeps
//! and CSV output.

mod experiment;
pub mod output;
mod scenario;

pub use experiment::{
    generate_truth, initial_state, observability_over_run, performance_index, performance_of,
    q_sweep, q_sweep_on, run_experiment, run_filter, system_for, Estimates, Metrics,
    ObservabilityRow, RunResult, SweepPoint, Truth,
};
pub use scenario::{
    DemandSpec, GeometrySpec, InitialSpec, Issue, OfframpMode, OnRampDemand, Scenario,
    SegmentLengths, ValidationErrors,
};

use thiserror::Error;

use crate::error::{FilterError, HighwayError, ModelError, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Validation(#[from] ValidationErrors),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Highway(#[from] HighwayError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation",
            Self::Parse(_) => "parse",
            Self::Highway(_) | Self::Sim(_) => "simulation",
            Self::Model(_) => "model",
            Self::Filter(_) => "filter",
            Self::Metric(_) => "metric",
            Self::Io(_) | Self::Csv(_) => "io",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let issues = match self {
            Self::Validation(v) => serde_json::to_value(&v.issues).unwrap_or_default(),
            _ => serde_json::Value::Array(Vec::new()),
        };
        serde_json::json!({ "error": self.kind(), "message": self.to_string(), "issues": issues })
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
