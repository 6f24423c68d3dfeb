//! The pure-transition contract every replica implements: an input event plus
//! the current simulated time go in, and all externally visible effects come
//! out. Replicas hold no clocks and schedule no I/O themselves.

use crate::cluster::{NodeId, Term};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimerKind {
    Election,
    Heartbeat,
    /// CoSi round deadline, tagged with the round id it guards.
    CosiRound(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerReq {
    /// Ask the simulator for a fresh randomized election deadline drawn from
    /// this node's timeout interval (the world rng is the only entropy source).
    ElectionReset,
    /// Absolute-time timer.
    At { kind: TimerKind, at: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommitVia {
    /// Leader-side quorum of acknowledgements.
    Quorum,
    /// Follower-side commit certificate.
    Cert,
    /// Collective signature from a CoSi round.
    CoSig,
    /// Implied by a commit of a higher index.
    Prefix,
    /// Proof carried in a catch-up response.
    Proof,
}

impl CommitVia {
    pub fn label(self) -> &'static str {
        match self {
            CommitVia::Quorum => "quorum",
            CommitVia::Cert => "cert",
            CommitVia::CoSig => "cosig",
            CommitVia::Prefix => "prefix",
            CommitVia::Proof => "proof",
        }
    }
}

/// One batch newly committed by a replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommittedBatch {
    pub term: Term,
    pub index: u64,
    pub digest: [u8; 32],
    pub request_ids: Vec<u64>,
    pub via: CommitVia,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOutcome {
    Accepted,
    /// Not the leader; carries the best known leader hint.
    NotLeader(Option<NodeId>),
}

/// Misbehaviour observed by a replica; recorded in the trace, never acted on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub about: NodeId,
    pub what: String,
}

/// Everything a single transition produced.
#[derive(Debug)]
pub struct Effects<M> {
    pub out: Vec<(NodeId, M)>,
    pub commits: Vec<CommittedBatch>,
    pub timers: Vec<TimerReq>,
    pub evidence: Vec<Evidence>,
    /// Local (non-message) acknowledgements, e.g. a leader counting itself.
    pub local_acks: Vec<(Term, u64, [u8; 32])>,
    pub client: Option<ClientOutcome>,
}

impl<M> Default for Effects<M> {
    fn default() -> Self {
        Effects {
            out: Vec::new(),
            commits: Vec::new(),
            timers: Vec::new(),
            evidence: Vec::new(),
            local_acks: Vec::new(),
            client: None,
        }
    }
}

impl<M> Effects<M> {
    pub fn send(&mut self, to: NodeId, msg: M) {
        self.out.push((to, msg));
    }

    pub fn note_evidence(&mut self, about: NodeId, what: impl Into<String>) {
        self.evidence.push(Evidence { about, what: what.into() });
    }
}
