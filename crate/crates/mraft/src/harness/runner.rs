//! Runs one scenario under one seed and condenses the trace into a report.

use crate::harness::checks::{check_trace, CheckContext, Violation};
use crate::harness::scenario::{Protocol, Scenario, ScenarioError};
use crate::simnet::trace::Trace;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Option<LatencySummary> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let pick = |q: f64| {
            let i = ((sorted.len() as f64 - 1.0) * q).round() as usize;
            sorted[i]
        };
        Some(LatencySummary {
            samples: sorted.len(),
            mean_ms: mean,
            median_ms: pick(0.5),
            p99_ms: pick(0.99),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Full scenario echo: the report alone reproduces the run.
    pub scenario: Scenario,
    pub seed: u64,
    pub sim_time_ms: f64,
    /// Batches committed by every live node (the run-wide floor).
    pub committed_batches: u64,
    /// Distinct client requests confirmed by an honest commit.
    pub committed_requests: usize,
    /// Leader-side latency: entry broadcast to replication-quorum commit.
    pub leader_commit_latency: Option<LatencySummary>,
    /// Client-side latency: first injection to first honest commit.
    pub request_latency: Option<LatencySummary>,
    pub messages_total: u64,
    /// Replication traffic (append/ack/cert and friends) attributed to
    /// committed batches; excludes heartbeats, elections, and catch-up.
    pub replication_messages: u64,
    pub messages_per_commit: f64,
    pub elections: usize,
    /// Every leadership assumption: (term, node, tee flag).
    pub leader_history: Vec<(u64, usize, bool)>,
    pub violations: Vec<Violation>,
    pub trace_digest: String,
}

/// Replication message labels per protocol, for per-commit accounting.
pub fn replication_labels(protocol: Protocol) -> &'static [&'static str] {
    match protocol {
        Protocol::MRaft => &[
            "append",
            "ack",
            "cert",
            "cosiannounce",
            "cosicommit",
            "cosichallenge",
            "cosiresponse",
            "cosig",
        ],
        Protocol::Raft => &["append", "ack", "commitnotice"],
        Protocol::Pbft => &["preprepare", "prepare", "commit"],
    }
}

/// Counts replication sends attributed to the first `commits` log indexes.
pub fn count_replication_sends(trace: &Trace, protocol: Protocol, commits: u64) -> u64 {
    let labels = replication_labels(protocol);
    trace
        .records()
        .iter()
        .filter(|r| r.kind == "send")
        .filter(|r| r.note_value("msg").map(|m| labels.contains(&m)).unwrap_or(false))
        .filter(|r| r.index.map(|i| i >= 1 && i <= commits).unwrap_or(false))
        .count() as u64
}

/// Builds the world, runs it to the bound, checks every invariant, and
/// returns the report together with the full trace.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<(MetricsReport, Trace), ScenarioError> {
    scenario.validate()?;
    let mut world = scenario.build_world(seed)?;
    world.run(scenario.run_bound());
    let trace = world.trace().clone();
    let stats = world.stats().clone();
    let committed_batches = world.min_live_commits();
    let violations = check_trace(&trace, CheckContext { q_rep: scenario.q_rep() });
    let messages_total = trace.records().iter().filter(|r| r.kind == "send").count() as u64;
    let replication_messages =
        count_replication_sends(&trace, scenario.protocol, committed_batches);
    let messages_per_commit = if committed_batches > 0 {
        replication_messages as f64 / committed_batches as f64
    } else {
        0.0
    };
    let report = MetricsReport {
        scenario: scenario.clone(),
        seed,
        sim_time_ms: world.clock().as_ms(),
        committed_batches,
        committed_requests: stats.request_latencies_ms.len(),
        leader_commit_latency: LatencySummary::from_samples(&stats.commit_latencies_ms),
        request_latency: LatencySummary::from_samples(&stats.request_latencies_ms),
        messages_total,
        replication_messages,
        messages_per_commit,
        elections: stats.elections,
        leader_history: stats.leader_history.clone(),
        violations,
        trace_digest: trace.digest(),
    };
    Ok((report, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::canned;

    #[test]
    fn fault_free_mraft_run_produces_clean_report() {
        let scenario = canned::fault_free(Protocol::MRaft, 5, 50);
        let (report, trace) = run_scenario(&scenario, 3).unwrap();
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.committed_batches >= 1);
        assert_eq!(report.committed_requests, 50);
        assert_eq!(report.trace_digest, trace.digest());
        assert!(report.leader_commit_latency.is_some());
    }

    #[test]
    fn report_round_trips_through_json() {
        let scenario = canned::fault_free(Protocol::Raft, 5, 20);
        let (report, _) = run_scenario(&scenario, 1).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn latency_summary_quantiles() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let s = LatencySummary::from_samples(&samples).unwrap();
        assert_eq!(s.samples, 100);
        assert!((s.mean_ms - 50.5).abs() < 1e-9);
        assert_eq!(s.median_ms, 51.0);
        assert_eq!(s.p99_ms, 99.0);
        assert!(LatencySummary::from_samples(&[]).is_none());
    }
}
