//! Deterministic discrete-event network simulation.

pub mod latency;
pub mod trace;
pub mod world;
