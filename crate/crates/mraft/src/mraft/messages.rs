//! The closed set of MRaft protocol messages and the attestation artifacts
//! they carry.

use crate::cluster::{ClusterConfig, LogEntry, NodeId, Term};
use crate::crypto::{self, GroupParams, ParticipationBitmap, Signature};
use serde::{Deserialize, Serialize};

/// Commit certificate produced inside a TEE leader: attests that the entry at
/// `(term, index)` with `digest` was acknowledged by the nodes in
/// `ack_bitmap`. The enclave stamp is modelled by `leader` plus the shared
/// knowledge of which nodes are TEE-flagged; the simulator never lets a
/// non-TEE node emit one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitCertificate {
    pub term: Term,
    pub index: u64,
    pub entry_digest: [u8; 32],
    pub ack_bitmap: ParticipationBitmap,
    pub leader: NodeId,
}

impl CommitCertificate {
    pub fn valid(&self, config: &ClusterConfig) -> bool {
        config.is_tee(self.leader)
            && self.ack_bitmap.len() == config.n
            && self.ack_bitmap.popcount() >= config.q_rep
    }
}

/// Collective signature over an entry, produced by a CoSi round driven by a
/// non-TEE leader. The bitmap covers followers only; the leader does not
/// co-sign its own proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveCommit {
    pub term: Term,
    pub index: u64,
    pub entry_digest: [u8; 32],
    pub cosig: crypto::CollectiveSignature,
}

impl CollectiveCommit {
    pub fn valid(&self, config: &ClusterConfig, group: &GroupParams, pks: &[u64]) -> bool {
        let msg = LogEntry::signable_bytes(self.term, self.index, &self.entry_digest);
        self.cosig.bitmap.popcount() >= config.q_rep
            && crypto::cosi_verify(group, pks, &msg, &self.cosig)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommitProof {
    Cert(CommitCertificate),
    CoSig(CollectiveCommit),
}

impl CommitProof {
    pub fn index(&self) -> u64 {
        match self {
            CommitProof::Cert(c) => c.index,
            CommitProof::CoSig(c) => c.index,
        }
    }

    pub fn entry_digest(&self) -> [u8; 32] {
        match self {
            CommitProof::Cert(c) => c.entry_digest,
            CommitProof::CoSig(c) => c.entry_digest,
        }
    }

    pub fn valid(&self, config: &ClusterConfig, group: &GroupParams, pks: &[u64]) -> bool {
        match self {
            CommitProof::Cert(c) => c.valid(config),
            CommitProof::CoSig(c) => c.valid(config, group, pks),
        }
    }
}

/// A publicly verifiable vote for `(term, candidate)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub term: Term,
    pub voter: NodeId,
    pub candidate: NodeId,
    pub sig: Signature,
}

impl Vote {
    pub fn signable(term: Term, voter: NodeId, candidate: NodeId) -> Vec<u8> {
        let mut out = b"vote".to_vec();
        out.extend_from_slice(&term.0.to_be_bytes());
        out.extend_from_slice(&(voter.0 as u64).to_be_bytes());
        out.extend_from_slice(&(candidate.0 as u64).to_be_bytes());
        out
    }

    pub fn verify(&self, group: &GroupParams, pks: &[u64]) -> bool {
        match pks.get(self.voter.0) {
            Some(&pk) => crypto::verify(
                group,
                pk,
                &Vote::signable(self.term, self.voter, self.candidate),
                &self.sig,
            ),
            None => false,
        }
    }
}

/// Either an enclave-aggregated vote certificate (TEE winner) or the explicit
/// set of signed votes (non-TEE winner).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProofOfLeadership {
    Enclave { term: Term, candidate: NodeId, vote_bitmap: ParticipationBitmap },
    Votes(Vec<Vote>),
}

impl ProofOfLeadership {
    /// Validates the proof for the claimed `(term, leader)`.
    pub fn valid(
        &self,
        config: &ClusterConfig,
        group: &GroupParams,
        pks: &[u64],
        term: Term,
        leader: NodeId,
    ) -> bool {
        match self {
            ProofOfLeadership::Enclave { term: t, candidate, vote_bitmap } => {
                // enclave aggregation only exists on TEE nodes
                config.is_tee(leader)
                    && *t == term
                    && *candidate == leader
                    && vote_bitmap.len() == config.n
                    && vote_bitmap.popcount() >= config.q_elec
            }
            ProofOfLeadership::Votes(votes) => {
                let mut voters = ParticipationBitmap::empty(config.n);
                for v in votes {
                    if v.term == term
                        && v.candidate == leader
                        && v.voter.0 < config.n
                        && v.verify(group, pks)
                    {
                        voters.set(v.voter.0);
                    }
                }
                voters.popcount() >= config.q_elec
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MRaftMsg {
    Append {
        term: Term,
        /// Term of the entry preceding `entry` in the leader's log.
        prev_term: Term,
        entry: LogEntry,
    },
    Ack {
        term: Term,
        index: u64,
        digest: [u8; 32],
        signer: NodeId,
    },
    Cert(CommitCertificate),
    HeartBeat {
        term: Term,
        leader: NodeId,
        last_commit_index: u64,
        proof: Option<ProofOfLeadership>,
    },
    RequestVote {
        candidate: NodeId,
        new_term: Term,
        last_log_term: Term,
        last_log_index: u64,
    },
    Vote(Vote),
    CoSiAnnounce {
        term: Term,
        round: u64,
        entry: LogEntry,
    },
    CoSiCommitMsg {
        term: Term,
        round: u64,
        index: u64,
        signer: NodeId,
        commitment: u64,
    },
    CoSiChallengeMsg {
        term: Term,
        round: u64,
        index: u64,
        agg_commitment: u64,
        challenge: u64,
        participants: ParticipationBitmap,
    },
    CoSiResponseMsg {
        term: Term,
        round: u64,
        index: u64,
        signer: NodeId,
        digest: [u8; 32],
        response: u64,
    },
    CoSig(CollectiveCommit),
    FetchEntries {
        from_index: u64,
    },
    EntriesResponse {
        entries: Vec<LogEntry>,
        /// Digest of the entry just before the first one returned, so the
        /// receiver can check adjacency; absent when the range starts at 1.
        prev_digest: Option<[u8; 32]>,
        proof: Option<CommitProof>,
    },
}

impl MRaftMsg {
    /// Short label used in trace records and message accounting.
    pub fn label(&self) -> &'static str {
        match self {
            MRaftMsg::Append { .. } => "append",
            MRaftMsg::Ack { .. } => "ack",
            MRaftMsg::Cert(_) => "cert",
            MRaftMsg::HeartBeat { .. } => "heartbeat",
            MRaftMsg::RequestVote { .. } => "requestvote",
            MRaftMsg::Vote(_) => "vote",
            MRaftMsg::CoSiAnnounce { .. } => "cosiannounce",
            MRaftMsg::CoSiCommitMsg { .. } => "cosicommit",
            MRaftMsg::CoSiChallengeMsg { .. } => "cosichallenge",
            MRaftMsg::CoSiResponseMsg { .. } => "cosiresponse",
            MRaftMsg::CoSig(_) => "cosig",
            MRaftMsg::FetchEntries { .. } => "fetch",
            MRaftMsg::EntriesResponse { .. } => "entries",
        }
    }

    /// `(term, index, digest)` as far as the message carries them, for traces.
    pub fn trace_fields(&self) -> (Option<Term>, Option<u64>, Option<[u8; 32]>) {
        match self {
            MRaftMsg::Append { term, entry, .. } => {
                (Some(*term), Some(entry.index), Some(entry.digest()))
            }
            MRaftMsg::Ack { term, index, digest, .. } => (Some(*term), Some(*index), Some(*digest)),
            MRaftMsg::Cert(c) => (Some(c.term), Some(c.index), Some(c.entry_digest)),
            MRaftMsg::HeartBeat { term, last_commit_index, .. } => {
                (Some(*term), Some(*last_commit_index), None)
            }
            MRaftMsg::RequestVote { new_term, last_log_index, .. } => {
                (Some(*new_term), Some(*last_log_index), None)
            }
            MRaftMsg::Vote(v) => (Some(v.term), None, None),
            MRaftMsg::CoSiAnnounce { term, entry, .. } => {
                (Some(*term), Some(entry.index), Some(entry.digest()))
            }
            MRaftMsg::CoSiCommitMsg { term, index, .. } => (Some(*term), Some(*index), None),
            MRaftMsg::CoSiChallengeMsg { term, index, .. } => (Some(*term), Some(*index), None),
            MRaftMsg::CoSiResponseMsg { term, index, digest, .. } => {
                (Some(*term), Some(*index), Some(*digest))
            }
            MRaftMsg::CoSig(c) => (Some(c.term), Some(c.index), Some(c.entry_digest)),
            MRaftMsg::FetchEntries { from_index } => (None, Some(*from_index), None),
            MRaftMsg::EntriesResponse { entries, .. } => {
                (None, entries.first().map(|e| e.index), None)
            }
        }
    }

    /// Extra note fields for trace records (e.g. which candidate a vote names).
    pub fn trace_note(&self) -> String {
        match self {
            MRaftMsg::Vote(v) => format!("cand:{}", v.candidate),
            MRaftMsg::HeartBeat { proof: Some(_), .. } => "proof:1".to_string(),
            _ => String::new(),
        }
    }
}
