//! Cluster identity, replicated-log types, and the quorum arithmetic shared by
//! every protocol in the crate.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use thiserror::Error;

/// Identity of a node within a cluster. Ids are dense, `0..n-1`, and stable
/// for the lifetime of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Leadership epoch. Monotonically non-decreasing at every node over a run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct Term(pub u64);

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cluster size {0} is invalid: need n >= 2 with (n - 2) divisible by 3")]
    InvalidSize(usize),
    #[error("tee flag vector has {got} entries, expected {want}")]
    TeeFlagLength { got: usize, want: usize },
    #[error("only {n_tee} TEE nodes but the model requires at least f + 1 = {min}")]
    TooFewTeeNodes { n_tee: usize, min: usize },
    #[error("election quorum override {q} out of range (must be in 1..={n})")]
    BadQuorumOverride { q: usize, n: usize },
}

/// Quorum parameters derived from the cluster size `n = 3f + 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuorumParams {
    pub f: usize,
    pub q_rep: usize,
    pub q_elec: usize,
}

/// Derives `(f, q_rep, q_elec)` from `n`. Only sizes of the exact form
/// `n = 3f + 2` are accepted; anything else is a configuration error.
pub fn derive_params(n: usize) -> Result<QuorumParams, ConfigError> {
    if n < 2 || (n - 2) % 3 != 0 {
        return Err(ConfigError::InvalidSize(n));
    }
    let f = (n - 2) / 3;
    Ok(QuorumParams {
        f,
        q_rep: 2 * f + 1,
        q_elec: 2 * f + 2,
    })
}

/// Minimum overlap of any two quorums of size `q_elec` drawn from `n` nodes.
pub fn election_quorum_intersection(n: usize, q_elec: usize) -> usize {
    (2 * q_elec).saturating_sub(n)
}

/// Static cluster configuration, known in full to every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n: usize,
    pub f: usize,
    pub q_rep: usize,
    pub q_elec: usize,
    /// Per-node TEE capability; part of shared genesis state.
    pub tee: Vec<bool>,
}

impl ClusterConfig {
    pub fn new(n: usize, tee: Vec<bool>) -> Result<ClusterConfig, ConfigError> {
        let params = derive_params(n)?;
        if tee.len() != n {
            return Err(ConfigError::TeeFlagLength { got: tee.len(), want: n });
        }
        let n_tee = tee.iter().filter(|&&t| t).count();
        if n_tee < params.f + 1 {
            return Err(ConfigError::TooFewTeeNodes { n_tee, min: params.f + 1 });
        }
        Ok(ClusterConfig {
            n,
            f: params.f,
            q_rep: params.q_rep,
            q_elec: params.q_elec,
            tee,
        })
    }

    /// Overrides the election quorum. Only used by ablation scenarios that
    /// deliberately weaken the protocol to demonstrate why `2f + 2` matters.
    pub fn with_election_quorum(mut self, q_elec: usize) -> Result<ClusterConfig, ConfigError> {
        if q_elec == 0 || q_elec > self.n {
            return Err(ConfigError::BadQuorumOverride { q: q_elec, n: self.n });
        }
        self.q_elec = q_elec;
        Ok(self)
    }

    pub fn n_tee(&self) -> usize {
        self.tee.iter().filter(|&&t| t).count()
    }

    pub fn is_tee(&self, id: NodeId) -> bool {
        self.tee[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n).map(NodeId)
    }
}

/// How a voter compares candidate logs. `TermIndex` is the safe Raft-style
/// lexicographic rule; `IndexOnly` is the weaker literal rule, kept behind a
/// scenario flag for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    #[default]
    TermIndex,
    IndexOnly,
}

/// True iff log summary `a` is at least as up-to-date as `b`.
pub fn is_more_up_to_date(rule: VoteRule, a: (Term, u64), b: (Term, u64)) -> bool {
    match rule {
        VoteRule::TermIndex => a.0 > b.0 || (a.0 == b.0 && a.1 >= b.1),
        VoteRule::IndexOnly => a.1 >= b.1,
    }
}

/// A single replicated-log entry. `request` is an opaque payload (in practice
/// an encoded request batch) and `request_id` is the id of its first request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub term: Term,
    pub index: u64,
    pub request: Vec<u8>,
    pub request_id: u64,
}

impl LogEntry {
    /// Canonical signable material for `(term, index, payload digest)`:
    /// length-prefixed big-endian fields. Documented in the README so traces
    /// are replayable bit-exactly.
    pub fn signable_bytes(term: Term, index: u64, payload_digest: &[u8; 32]) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 + 8 + 8 + 32);
        out.extend_from_slice(&8u64.to_be_bytes());
        out.extend_from_slice(&term.0.to_be_bytes());
        out.extend_from_slice(&8u64.to_be_bytes());
        out.extend_from_slice(&index.to_be_bytes());
        out.extend_from_slice(&32u64.to_be_bytes());
        out.extend_from_slice(payload_digest);
        out
    }

    pub fn payload_digest(&self) -> [u8; 32] {
        Sha256::digest(&self.request).into()
    }

    /// Digest identifying this entry's slot content: hash of the canonical
    /// signable bytes.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(Self::signable_bytes(self.term, self.index, &self.payload_digest())).into()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("entry index {got} does not follow log tail {tail}")]
    NonContiguous { got: u64, tail: u64 },
    #[error("entry term {got} precedes tail term {tail}")]
    TermRegression { got: Term, tail: Term },
    #[error("cannot truncate at {at}: committed prefix ends at {committed}")]
    TruncatesCommitted { at: u64, committed: u64 },
    #[error("cannot commit to {to}: log has {len} entries")]
    CommitPastEnd { to: u64, len: u64 },
}

/// The replicated log plus commit bookkeeping. Indices are 1-based; index 0
/// denotes the empty log in comparisons.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicatedLog {
    entries: Vec<LogEntry>,
    last_commit: u64,
}

impl ReplicatedLog {
    pub fn new() -> ReplicatedLog {
        ReplicatedLog::default()
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_commit_index(&self) -> u64 {
        self.last_commit
    }

    /// `(term, index)` of the last entry; `(0, 0)` for an empty log.
    pub fn last_summary(&self) -> (Term, u64) {
        match self.entries.last() {
            Some(e) => (e.term, e.index),
            None => (Term(0), 0),
        }
    }

    pub fn get(&self, index: u64) -> Option<&LogEntry> {
        if index == 0 {
            return None;
        }
        self.entries.get(index as usize - 1)
    }

    pub fn term_at(&self, index: u64) -> Option<Term> {
        self.get(index).map(|e| e.term)
    }

    pub fn append(&mut self, entry: LogEntry) -> Result<(), LogError> {
        let (tail_term, tail_index) = self.last_summary();
        if entry.index != tail_index + 1 {
            return Err(LogError::NonContiguous { got: entry.index, tail: tail_index });
        }
        if entry.term < tail_term {
            return Err(LogError::TermRegression { got: entry.term, tail: tail_term });
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Removes entries at `at` and above. Refuses to touch the committed prefix.
    pub fn truncate_from(&mut self, at: u64) -> Result<(), LogError> {
        if at <= self.last_commit {
            return Err(LogError::TruncatesCommitted { at, committed: self.last_commit });
        }
        if at >= 1 {
            self.entries.truncate(at as usize - 1);
        }
        Ok(())
    }

    /// Advances the commit index, returning the newly committed entries in
    /// order. A target at or below the current commit index is a no-op.
    pub fn commit_to(&mut self, to: u64) -> Result<Vec<LogEntry>, LogError> {
        if to > self.len() {
            return Err(LogError::CommitPastEnd { to, len: self.len() });
        }
        if to <= self.last_commit {
            return Ok(Vec::new());
        }
        let newly: Vec<LogEntry> =
            self.entries[self.last_commit as usize..to as usize].to_vec();
        self.last_commit = to;
        Ok(newly)
    }

    pub fn entries_from(&self, from: u64) -> &[LogEntry] {
        if from == 0 || from > self.len() {
            return &[];
        }
        &self.entries[from as usize - 1..]
    }

    pub fn iter(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_params_published_sizes() {
        // n=5 -> f=1, q_rep=3, q_elec=4
        assert_eq!(
            derive_params(5).unwrap(),
            QuorumParams { f: 1, q_rep: 3, q_elec: 4 }
        );
        // degenerate f=0 case
        assert_eq!(
            derive_params(2).unwrap(),
            QuorumParams { f: 0, q_rep: 1, q_elec: 2 }
        );
        // n=47 is one of the evaluated cluster sizes
        assert_eq!(
            derive_params(47).unwrap(),
            QuorumParams { f: 15, q_rep: 31, q_elec: 32 }
        );
    }

    #[test]
    fn derive_params_rejects_everything_else() {
        for n in 2..100usize {
            let res = derive_params(n);
            if (n - 2) % 3 == 0 {
                assert!(res.is_ok(), "n={n}");
            } else {
                assert_eq!(res, Err(ConfigError::InvalidSize(n)), "n={n}");
            }
        }
        assert!(derive_params(0).is_err());
        assert!(derive_params(1).is_err());
    }

    #[test]
    fn quorum_intersections() {
        assert_eq!(election_quorum_intersection(5, 4), 3);
        // the unsafe 2f+1 ablation overlap
        assert_eq!(election_quorum_intersection(5, 3), 1);
        assert_eq!(election_quorum_intersection(11, 8), 5);
        // 2*(2f+2) - (3f+2) = f + 2 for all f
        for f in 0..=20usize {
            let n = 3 * f + 2;
            assert_eq!(election_quorum_intersection(n, 2 * f + 2), f + 2);
            // replication/election cross-quorum overlap leaves f+1 nodes
            assert_eq!((2 * f + 1) + (2 * f + 2) - n, f + 1);
        }
    }

    #[test]
    fn up_to_date_comparison() {
        let r = VoteRule::TermIndex;
        assert!(is_more_up_to_date(r, (Term(2), 5), (Term(2), 5)));
        assert!(is_more_up_to_date(r, (Term(3), 1), (Term(2), 9)));
        assert!(!is_more_up_to_date(r, (Term(2), 4), (Term(2), 5)));
        // the literal index-only rule disagrees on the cross-term case
        assert!(!is_more_up_to_date(VoteRule::IndexOnly, (Term(3), 1), (Term(2), 9)));
    }

    #[test]
    fn up_to_date_is_total_preorder() {
        let mut pairs = Vec::new();
        for t in 0..=5u64 {
            for i in 0..=5u64 {
                pairs.push((Term(t), i));
            }
        }
        for &a in &pairs {
            assert!(is_more_up_to_date(VoteRule::TermIndex, a, a));
            for &b in &pairs {
                // totality
                assert!(
                    is_more_up_to_date(VoteRule::TermIndex, a, b)
                        || is_more_up_to_date(VoteRule::TermIndex, b, a)
                );
                for &c in &pairs {
                    if is_more_up_to_date(VoteRule::TermIndex, a, b)
                        && is_more_up_to_date(VoteRule::TermIndex, b, c)
                    {
                        assert!(is_more_up_to_date(VoteRule::TermIndex, a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn config_checks_tee_count() {
        assert!(ClusterConfig::new(5, vec![true, true, false, false, false]).is_ok());
        assert_eq!(
            ClusterConfig::new(5, vec![true, false, false, false, false]),
            Err(ConfigError::TooFewTeeNodes { n_tee: 1, min: 2 })
        );
        assert!(ClusterConfig::new(6, vec![true; 6]).is_err());
    }

    fn entry(term: u64, index: u64, payload: &[u8]) -> LogEntry {
        LogEntry { term: Term(term), index, request: payload.to_vec(), request_id: index }
    }

    #[test]
    fn log_contiguity_and_commit() {
        let mut log = ReplicatedLog::new();
        log.append(entry(1, 1, b"a")).unwrap();
        log.append(entry(1, 2, b"b")).unwrap();
        assert!(matches!(log.append(entry(1, 4, b"d")), Err(LogError::NonContiguous { .. })));
        assert!(matches!(log.append(entry(0, 3, b"c")), Err(LogError::TermRegression { .. })));

        let committed = log.commit_to(2).unwrap();
        assert_eq!(committed.len(), 2);
        assert_eq!(log.last_commit_index(), 2);
        assert!(log.commit_to(1).unwrap().is_empty());
        assert!(matches!(log.commit_to(9), Err(LogError::CommitPastEnd { .. })));

        log.append(entry(2, 3, b"c")).unwrap();
        log.truncate_from(3).unwrap();
        assert_eq!(log.len(), 2);
        assert!(matches!(log.truncate_from(2), Err(LogError::TruncatesCommitted { .. })));
    }

    #[test]
    fn entry_digest_changes_with_content() {
        let a = entry(1, 1, b"a");
        let b = entry(1, 1, b"b");
        let c = entry(2, 1, b"a");
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest(), entry(1, 1, b"a").digest());
    }
}
