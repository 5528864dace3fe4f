//! Orchestration core for virtualized radio access networks: descriptor
//! catalog, compute and spectrum resources, a lifecycle engine driven by a
//! task queue, metric monitoring with alarms, and a simulated clock that
//! runs the whole loop headlessly.

pub mod catalog;
pub mod fixtures;
pub mod infra;
pub mod lifecycle;
pub mod monitor;
pub mod orchestrator;
pub mod queue;
pub mod rf;
pub mod sim;

/// Simulated time in seconds.
pub type SimTime = f64;
