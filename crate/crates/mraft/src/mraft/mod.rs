//! The MRaft protocol: replica state machine and message set.

pub mod messages;
pub mod replica;

pub use messages::{
    CollectiveCommit, CommitCertificate, CommitProof, MRaftMsg, ProofOfLeadership, Vote,
};
pub use replica::{NonTeeLeaderMode, Replica, ReplicaOptions, Role};
