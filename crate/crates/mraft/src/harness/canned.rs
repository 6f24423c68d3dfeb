//! Canned scenarios: the adversarial safety suite, the election-quorum
//! ablation, and the benchmark configurations.

use crate::adversary::{ByzantineStrategy, FaultAction, FaultEvent, FaultSchedule};
use crate::harness::scenario::{
    BoundSpec, LatencySpec, PayloadSpec, Protocol, Scenario, TimeoutSpec, WorkloadSpec,
};
use crate::mraft::replica::NonTeeLeaderMode;
use crate::cluster::VoteRule;

fn base(name: &str, protocol: Protocol, n: usize) -> Scenario {
    Scenario {
        name: name.to_string(),
        protocol,
        n,
        tee: None,
        latency: LatencySpec::Uniform { ms: 1.0 },
        election_quorum: None,
        vote_rule: VoteRule::TermIndex,
        non_tee_leader: NonTeeLeaderMode::Cosi,
        heartbeat_interval_ms: 50.0,
        cosi_phase_timeout_ms: 500.0,
        batch_max_bytes: 20 * 1024,
        timeouts: TimeoutSpec::default(),
        startup_grace_ms: 300.0,
        retry_interval_ms: 500.0,
        gst_ms: 0.0,
        pre_gst_extra_ms: 0.0,
        workload: WorkloadSpec {
            count: 100,
            batch: 10,
            interval_ms: 50.0,
            start_ms: 0.0,
            payload: PayloadSpec::Digest,
        },
        faults: FaultSchedule::default(),
        bound: BoundSpec { max_time_ms: 10_000.0, commits: None },
        seed: 0,
    }
}

fn crash(at_ms: f64, node: usize) -> FaultEvent {
    FaultEvent { at_ms, action: FaultAction::Crash { node } }
}

fn byz(at_ms: f64, node: usize, strategy: ByzantineStrategy) -> FaultEvent {
    FaultEvent { at_ms, action: FaultAction::Byzantine { node, strategy } }
}

fn partition(at_ms: f64, groups: Vec<Vec<usize>>) -> FaultEvent {
    FaultEvent { at_ms, action: FaultAction::Partition { groups } }
}

fn heal(at_ms: f64) -> FaultEvent {
    FaultEvent { at_ms, action: FaultAction::Heal }
}

/// Default mraft layout for the suite: nodes `0..f+2` are TEE-capable, the
/// remaining `2f` are not.
fn suite_tee(n: usize) -> Vec<bool> {
    let f = (n - 2) / 3;
    (0..n).map(|i| i < f + 2).collect()
}

/// A plain run with no faults at all.
pub fn fault_free(protocol: Protocol, n: usize, requests: u64) -> Scenario {
    let mut s = base(&format!("{}_fault_free_n{n}", protocol.label()), protocol, n);
    s.workload.count = requests;
    s.bound.max_time_ms = 5_000.0;
    s
}

/// A non-TEE follower equivocates on every append it relays and corrupts
/// entries bound for half the cluster.
pub fn equivocating_follower(f: usize) -> Scenario {
    let n = 3 * f + 2;
    let mut s = base(&format!("equivocating_follower_f{f}"), Protocol::MRaft, n);
    s.tee = Some(suite_tee(n));
    s.faults = FaultSchedule { events: vec![byz(0.0, n - 1, ByzantineStrategy::Equivocate)] };
    s
}

/// Forces the cluster into the CoSi fallback with the freshest logs held by
/// non-TEE nodes, one of them Byzantine. Phase 1 replicates through the
/// leader plus exactly the non-TEE nodes (a full replication quorum); phase 2
/// isolates the leader, so only a fresh non-TEE candidate can win — sometimes
/// the equivocator itself.
pub fn equivocating_leader(f: usize) -> Scenario {
    let n = 3 * f + 2;
    let mut s = base(&format!("equivocating_leader_f{f}"), Protocol::MRaft, n);
    s.tee = Some(suite_tee(n));
    // leader + the 2f non-TEE nodes = 2f + 1 = exactly q_rep
    let mut phase1 = vec![0];
    phase1.extend(f + 2..n);
    s.faults = FaultSchedule {
        events: vec![
            byz(0.0, n - 1, ByzantineStrategy::Equivocate),
            partition(0.0, vec![phase1]),
            partition(600.0, vec![vec![0]]),
        ],
    };
    // keep requests flowing well past the phase-2 election so the non-TEE
    // winner has fresh entries to drive through the co-signing path
    s.workload.count = 200;
    s.workload.interval_ms = 150.0;
    s.bound.max_time_ms = 15_000.0;
    s
}

/// Up to `f` Byzantine voters grant every candidate that asks; the leader is
/// then partitioned away to force an election.
pub fn double_vote(f: usize) -> Scenario {
    let n = 3 * f + 2;
    let mut s = base(&format!("double_vote_f{f}"), Protocol::MRaft, n);
    s.tee = Some(suite_tee(n));
    let mut events: Vec<FaultEvent> =
        (n - f..n).map(|i| byz(0.0, i, ByzantineStrategy::DoubleVote)).collect();
    events.push(partition(500.0, vec![vec![0]]));
    s.faults = FaultSchedule { events };
    s
}

/// A Byzantine candidate inflates its advertised log position when asking
/// for votes.
pub fn stale_lie(f: usize) -> Scenario {
    let n = 3 * f + 2;
    let mut s = base(&format!("stale_lie_f{f}"), Protocol::MRaft, n);
    s.tee = Some(suite_tee(n));
    s.faults = FaultSchedule {
        events: vec![
            byz(0.0, n - 1, ByzantineStrategy::StaleLie),
            partition(500.0, vec![vec![0]]),
        ],
    };
    s
}

/// `f` Byzantine followers acknowledge entries under corrupted digests.
pub fn digest_corrupt(f: usize) -> Scenario {
    let n = 3 * f + 2;
    let mut s = base(&format!("digest_corrupt_f{f}"), Protocol::MRaft, n);
    s.tee = Some(suite_tee(n));
    s.faults = FaultSchedule {
        events: (n - f..n).map(|i| byz(0.0, i, ByzantineStrategy::DigestCorrupt)).collect(),
    };
    s
}

/// A clean partition and heal, with the majority side free to elect a new
/// leader while the old one is cut off.
pub fn partition_heal(f: usize) -> Scenario {
    let n = 3 * f + 2;
    let mut s = base(&format!("partition_heal_f{f}"), Protocol::MRaft, n);
    s.tee = Some(suite_tee(n));
    s.faults = FaultSchedule {
        events: vec![partition(200.0, vec![vec![0, 1]]), heal(1_500.0)],
    };
    s.bound.max_time_ms = 15_000.0;
    s
}

/// The whole adversarial suite at a given `f`.
pub fn safety_suite(f: usize) -> Vec<Scenario> {
    vec![
        equivocating_follower(f),
        equivocating_leader(f),
        double_vote(f),
        stale_lie(f),
        digest_corrupt(f),
        partition_heal(f),
    ]
}

/// The election-quorum ablation at f=1 (n=5). A batch commits through the
/// replication quorum {0, 1, 2} where node 2 is a Byzantine double-voter;
/// the leader's side is then cut off. The stale TEE nodes 3 and 4 plus the
/// double-voter form exactly 2f+1 votes: enough under the weakened quorum to
/// elect a leader missing the committed entry, never enough under 2f+2.
pub fn entry_loss_ablation(election_quorum: Option<usize>) -> Scenario {
    let n = 5;
    let tag = match election_quorum {
        Some(q) => format!("_q{q}"),
        None => String::new(),
    };
    let mut s = base(&format!("entry_loss_ablation{tag}"), Protocol::MRaft, n);
    s.tee = Some(vec![true, true, false, true, true]);
    s.election_quorum = election_quorum;
    s.workload = WorkloadSpec {
        count: 10,
        batch: 10,
        interval_ms: 10.0,
        start_ms: 0.0,
        payload: PayloadSpec::Digest,
    };
    s.faults = FaultSchedule {
        events: vec![
            byz(0.0, 2, ByzantineStrategy::DoubleVote),
            // phase 1: the entry commits through exactly {0, 1, 2}
            partition(0.0, vec![vec![0, 1, 2]]),
            // phase 2: the acked minority is cut down to the double-voter,
            // leaving {2, 3, 4} to elect with no honest acker among them
            partition(500.0, vec![vec![0, 1]]),
            heal(3_000.0),
        ],
    };
    s.bound.max_time_ms = 6_000.0;
    s
}

/// Leader crash at n=5 with two TEE survivors: the election-preference and
/// single-crash liveness scenario.
pub fn leader_crash(n: usize) -> Scenario {
    let mut s = base(&format!("leader_crash_n{n}"), Protocol::MRaft, n);
    s.tee = Some(if n == 5 {
        vec![true, true, false, true, false]
    } else {
        suite_tee(n)
    });
    s.faults = FaultSchedule { events: vec![crash(500.0, 0)] };
    s.bound.max_time_ms = 15_000.0;
    s
}

/// Fault-free message-complexity measurement: quiet network, long heartbeat
/// interval, batches spaced so replication windows never overlap.
pub fn complexity(protocol: Protocol, n: usize, commits: u64) -> Scenario {
    let mut s = base(&format!("{}_complexity_n{n}", protocol.label()), protocol, n);
    if protocol == Protocol::MRaft {
        s.tee = Some(suite_tee(n));
    }
    s.heartbeat_interval_ms = 10_000_000.0;
    s.workload = WorkloadSpec {
        count: commits * 10,
        batch: 10,
        interval_ms: 20.0,
        start_ms: 0.0,
        payload: PayloadSpec::Digest,
    };
    s.bound = BoundSpec { max_time_ms: 120_000.0, commits: Some(commits) };
    s
}

/// Liveness over the measured latency table: 1,000 requests, optional single
/// leader crash.
pub fn table1_liveness(n: usize, with_crash: bool) -> Scenario {
    let tag = if with_crash { "crash" } else { "fault_free" };
    let mut s = base(&format!("table1_{tag}_n{n}"), Protocol::MRaft, n);
    s.tee = Some(if n == 5 {
        vec![true, true, false, true, false]
    } else {
        suite_tee(n)
    });
    s.latency = LatencySpec::Table1;
    s.workload = WorkloadSpec {
        count: 1_000,
        batch: 10,
        interval_ms: 10.0,
        start_ms: 0.0,
        payload: PayloadSpec::Digest,
    };
    if with_crash {
        // mid-workload crash: injections are still flowing, so the successor
        // has unconfirmed requests to commit once elected
        s.faults = FaultSchedule { events: vec![crash(500.0, 0)] };
    }
    s.bound = BoundSpec { max_time_ms: 60_000.0, commits: None };
    s
}

/// Latency-shape measurement: Table 1 matrix, leader in East US, batches
/// spaced wide enough that each commits alone.
pub fn table1_latency(n: usize) -> Scenario {
    let mut s = base(&format!("table1_latency_n{n}"), Protocol::MRaft, n);
    s.tee = Some(suite_tee(n));
    s.latency = LatencySpec::Table1;
    s.workload = WorkloadSpec {
        count: 300,
        batch: 10,
        interval_ms: 150.0,
        start_ms: 0.0,
        payload: PayloadSpec::Digest,
    };
    s.bound = BoundSpec { max_time_ms: 60_000.0, commits: Some(30) };
    s
}

/// Demonstration: plain Raft with an equivocating leader loses agreement.
pub fn raft_equivocation(n: usize) -> Scenario {
    let mut s = base(&format!("raft_equivocation_n{n}"), Protocol::Raft, n);
    s.faults = FaultSchedule { events: vec![byz(0.0, 0, ByzantineStrategy::Equivocate)] };
    s.workload.count = 20;
    s.bound.max_time_ms = 5_000.0;
    s
}

/// Raft under pure crash faults stays safe.
pub fn raft_crashes(n: usize) -> Scenario {
    let mut s = base(&format!("raft_crashes_n{n}"), Protocol::Raft, n);
    let max_crashes = (n - 1) / 2;
    s.faults = FaultSchedule {
        events: (0..max_crashes).map(|i| crash(500.0 + 700.0 * i as f64, i)).collect(),
    };
    s.bound.max_time_ms = 20_000.0;
    s
}

/// Every canned scenario, for bundling to disk.
pub fn all_canned() -> Vec<Scenario> {
    let mut out = Vec::new();
    out.extend(safety_suite(1));
    out.extend(safety_suite(3));
    out.push(entry_loss_ablation(None));
    out.push(entry_loss_ablation(Some(3)));
    out.push(leader_crash(5));
    out.push(table1_liveness(5, false));
    out.push(table1_liveness(5, true));
    out.push(table1_liveness(11, false));
    out.push(table1_liveness(11, true));
    out.push(table1_latency(5));
    for n in [5, 11, 20] {
        out.push(complexity(Protocol::MRaft, n, 30));
        out.push(complexity(Protocol::Raft, n, 30));
    }
    for n in [4, 7, 13] {
        out.push(complexity(Protocol::Pbft, n, 30));
    }
    out.push(raft_equivocation(5));
    out.push(raft_crashes(5));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_canned_scenario_validates() {
        let all = all_canned();
        assert!(!all.is_empty());
        for s in &all {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }

    #[test]
    fn names_are_unique() {
        let all = all_canned();
        let mut names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        names.sort();
        let before = names.len();
        names.dedup();
        assert_eq!(names.len(), before);
    }

    #[test]
    fn safety_suite_covers_both_sizes() {
        assert_eq!(safety_suite(1).len(), 6);
        for s in safety_suite(3) {
            assert_eq!(s.n, 11);
        }
    }
}
