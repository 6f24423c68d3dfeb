//! Cross-protocol comparison: one row per (protocol, f) with each protocol
//! sized by its own fault-tolerance formula.

use crate::harness::canned;
use crate::harness::runner::run_scenario;
use crate::harness::scenario::{Protocol, ScenarioError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub protocol: String,
    pub f: usize,
    pub n: usize,
    pub committed_batches: u64,
    pub messages_per_commit: f64,
    pub mean_commit_latency_ms: f64,
}

/// Runs the fault-free complexity scenario for every (protocol, f) pair.
pub fn compare(
    protocols: &[Protocol],
    fs: &[usize],
    commits: u64,
    seed: u64,
) -> Result<Vec<CompareRow>, ScenarioError> {
    let mut rows = Vec::new();
    for &f in fs {
        for &p in protocols {
            let n = p.n_for_f(f);
            let scenario = canned::complexity(p, n, commits);
            let (report, _) = run_scenario(&scenario, seed)?;
            rows.push(CompareRow {
                protocol: p.label().to_string(),
                f,
                n,
                committed_batches: report.committed_batches,
                messages_per_commit: report.messages_per_commit,
                mean_commit_latency_ms: report
                    .leader_commit_latency
                    .map(|l| l.mean_ms)
                    .unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("protocol,f,n,committed_batches,messages_per_commit,mean_commit_latency_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.3},{:.3}\n",
            r.protocol, r.f, r.n, r.committed_batches, r.messages_per_commit, r.mean_commit_latency_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_follow_each_protocols_formula() {
        assert_eq!(Protocol::MRaft.n_for_f(1), 5);
        assert_eq!(Protocol::Raft.n_for_f(1), 3);
        assert_eq!(Protocol::Pbft.n_for_f(1), 4);
        assert_eq!(Protocol::MRaft.n_for_f(6), 20);
        assert_eq!(Protocol::Pbft.n_for_f(6), 19);
    }

    #[test]
    fn csv_has_one_row_per_pair() {
        let rows = compare(&[Protocol::MRaft, Protocol::Pbft], &[1], 5, 0).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("protocol,f,n,"));
    }
}
