//! Deterministic simulation study of MRaft, a mixed-fault-tolerance consensus
//! protocol that favours TEE-capable leaders, next to Raft and PBFT baselines.

pub mod adversary;
pub mod baselines;
pub mod batch;
pub mod cluster;
pub mod crypto;
pub mod harness;
pub mod mraft;
pub mod simnet;
pub mod step;
pub mod time;
