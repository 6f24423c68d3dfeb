//! Scenario ingestion, workload generation, invariant checking, and metrics.

pub mod canned;
pub mod checks;
pub mod compare;
pub mod runner;
pub mod scenario;
pub mod workload;
