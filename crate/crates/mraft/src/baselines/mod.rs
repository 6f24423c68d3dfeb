//! Baseline protocols used for message-complexity and fault-model comparison.

pub mod pbft;
pub mod raft;

pub use pbft::{PbftMsg, PbftOptions, PbftReplica};
pub use raft::{RaftMsg, RaftOptions, RaftReplica, RaftRole};
