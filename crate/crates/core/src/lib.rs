//! Discrete-event simulator and analytic models for pub/sub brokers that
//! connect accelerated edge-analytics stages, plus a datacenter cost model.
//!
//! Start from [`scenario::builtin_scenario`] or [`scenario::load_scenario`],
//! then either ask [`analytic::predict_stability`] for a closed-form answer or
//! run [`sim::run_simulation`] for the full picture.

pub mod analytic;
pub mod broker;
pub mod cli;
pub mod kernel;
pub mod scenario;
pub mod sim;
pub mod stages;
pub mod tco;
pub mod telemetry;

pub use analytic::{estimate_demand, min_mitigation, predict_stability, StabilityVerdict};
pub use scenario::{load_scenario, ScenarioError, ScenarioSpec};
pub use sim::{run_simulation, RunConfig, RunResult, SimError};
pub use stages::FrameRecord;
pub use telemetry::{breakdown, detect_instability, BreakdownReport, InstabilityVerdict};
