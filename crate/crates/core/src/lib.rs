//! Traffic state estimation for highways carrying both connected and
//! conventional vehicles.
//!
//! Connected vehicles report enough to know their own density and flow per
//! segment. Assuming both vehicle classes share one mean speed, total
//! density and flow follow from the inverse connected share
//! `ρ_i / ρ^a_i`, which obeys a linear time-varying model driven by entry,
//! ramp and exit detector counts. A Kalman filter on that model recovers
//! the totals; a second-order macroscopic simulator provides ground truth.
//!
//! - [`highway`]: units, domain types, fundamental diagram.
//! - [`metanet`]: ground-truth simulator and noisy measurements.
//! - [`ltv`]: system matrices and observability analysis.
//! - [`kalman`]: the filter and total reconstruction.
//! - [`harness`]: scenarios, experiments, sweeps and CSV output.

pub mod error;
pub mod harness;
pub mod highway;
pub mod kalman;
pub mod ltv;
pub mod metanet;

pub use error::{FilterError, HighwayError, ModelError, SimError};
pub use harness::{run_experiment, HarnessError, OfframpMode, Scenario};
pub use highway::{BoundaryInputs, HighwayGeometry, MetanetParams, RampLayout, TrafficState};
pub use kalman::{FilterState, KalmanConfig};
pub use ltv::LtvSystem;
pub use metanet::{MeasurementFrame, NoiseSpec, Simulator};
