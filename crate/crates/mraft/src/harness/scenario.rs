//! Scenario files: the single input describing a run. Everything a run needs
//! is in the scenario plus one seed, so every report is self-reproducing.

use crate::adversary::FaultSchedule;
use crate::cluster::{derive_params, ClusterConfig, NodeId, VoteRule};
use crate::crypto::{keygen, KeyPair, SIM_GROUP};
use crate::baselines::pbft::{PbftOptions, PbftReplica};
use crate::baselines::raft::{RaftOptions, RaftReplica};
use crate::mraft::replica::{NonTeeLeaderMode, Replica, ReplicaOptions};
use crate::simnet::latency::LatencyMatrix;
use crate::simnet::world::{Node, RunBound, World, WorldOptions};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[serde(rename = "mraft")]
    MRaft,
    Raft,
    Pbft,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::MRaft => "mraft",
            Protocol::Raft => "raft",
            Protocol::Pbft => "pbft",
        }
    }

    /// Cluster size needed to tolerate `f` faults under each protocol's model.
    pub fn n_for_f(self, f: usize) -> usize {
        match self {
            Protocol::MRaft => 3 * f + 2,
            Protocol::Raft => 2 * f + 1,
            Protocol::Pbft => 3 * f + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencySpec {
    /// The measured five-region round-trip table, nodes assigned round-robin,
    /// one-way delay = RTT / 2.
    Table1,
    Uniform { ms: f64 },
    /// Explicit one-way delays.
    Explicit { delays_ms: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayloadSpec {
    /// `(id, sha256(id))` requests.
    Digest,
    /// `(id, random bytes)` requests of a fixed size.
    Random { bytes: usize },
}

impl Default for PayloadSpec {
    fn default() -> Self {
        PayloadSpec::Digest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub count: u64,
    /// Requests injected together per arrival.
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_interval_ms")]
    pub interval_ms: f64,
    #[serde(default)]
    pub start_ms: f64,
    #[serde(default)]
    pub payload: PayloadSpec,
}

fn default_batch() -> usize {
    10
}

fn default_interval_ms() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutSpec {
    pub tee_ms: (f64, f64),
    pub non_tee_ms: (f64, f64),
}

impl Default for TimeoutSpec {
    fn default() -> Self {
        TimeoutSpec { tee_ms: (150.0, 300.0), non_tee_ms: (450.0, 600.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub max_time_ms: f64,
    /// Stop early once every live node has committed this many batches.
    #[serde(default)]
    pub commits: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub n: usize,
    /// Per-node TEE capability; mraft only. Defaults to the first `f + 1`
    /// nodes TEE-capable.
    #[serde(default)]
    pub tee: Option<Vec<bool>>,
    pub latency: LatencySpec,
    /// Ablation override; the protocol value is `2f + 2`.
    #[serde(default)]
    pub election_quorum: Option<usize>,
    #[serde(default)]
    pub vote_rule: VoteRule,
    #[serde(default)]
    pub non_tee_leader: NonTeeLeaderMode,
    #[serde(default = "default_heartbeat_ms")]
    pub heartbeat_interval_ms: f64,
    #[serde(default = "default_cosi_timeout_ms")]
    pub cosi_phase_timeout_ms: f64,
    #[serde(default = "default_batch_max_bytes")]
    pub batch_max_bytes: usize,
    #[serde(default)]
    pub timeouts: TimeoutSpec,
    #[serde(default = "default_startup_grace_ms")]
    pub startup_grace_ms: f64,
    #[serde(default = "default_retry_ms")]
    pub retry_interval_ms: f64,
    #[serde(default)]
    pub gst_ms: f64,
    #[serde(default)]
    pub pre_gst_extra_ms: f64,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub faults: FaultSchedule,
    pub bound: BoundSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_heartbeat_ms() -> f64 {
    50.0
}

fn default_cosi_timeout_ms() -> f64 {
    500.0
}

fn default_batch_max_bytes() -> usize {
    20 * 1024
}

fn default_startup_grace_ms() -> f64 {
    300.0
}

fn default_retry_ms() -> f64 {
    500.0
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: malformed scenario: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.to_string(), message: message.into() }
}

impl Scenario {
    /// Full semantic validation; errors name the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.n;
        if n < 2 {
            return Err(invalid("n", format!("cluster size {n} is too small")));
        }
        match self.protocol {
            Protocol::MRaft => {
                if (n - 2) % 3 != 0 {
                    return Err(invalid("n", format!("n - 2 not divisible by 3 (got n = {n})")));
                }
            }
            Protocol::Raft => {
                if n < 3 {
                    return Err(invalid("n", format!("raft needs n >= 3, got {n}")));
                }
            }
            Protocol::Pbft => {
                if n < 4 || (n - 1) % 3 != 0 {
                    return Err(invalid("n", format!("pbft needs n = 3f + 1 with f >= 1, got {n}")));
                }
            }
        }
        let tee = self.tee_flags()?;
        if self.protocol == Protocol::MRaft {
            let params = derive_params(n)
                .map_err(|e| invalid("n", e.to_string()))?;
            let n_tee = tee.iter().filter(|&&t| t).count();
            if n_tee < params.f + 1 {
                return Err(invalid(
                    "tee",
                    format!("{n_tee} TEE nodes but the model requires at least f + 1 = {}", params.f + 1),
                ));
            }
            if !tee[0] {
                return Err(invalid("tee", "node 0 is the initial leader and must be TEE-capable"));
            }
            if let Some(q) = self.election_quorum {
                if q == 0 || q > n {
                    return Err(invalid("election_quorum", format!("{q} out of range 1..={n}")));
                }
            }
            let f = params.f;
            self.faults
                .validate(n, f, &tee)
                .map_err(|e| invalid("faults", e.to_string()))?;
        } else {
            let f = match self.protocol {
                Protocol::Raft => (n - 1) / 2,
                Protocol::Pbft => (n - 1) / 3,
                Protocol::MRaft => unreachable!(),
            };
            // baselines have no TEE nodes; Byzantine faults are legal anywhere
            self.faults
                .validate(n, f, &vec![false; n])
                .map_err(|e| invalid("faults", e.to_string()))?;
        }
        match &self.latency {
            LatencySpec::Uniform { ms } => {
                if !ms.is_finite() || *ms < 0.0 {
                    return Err(invalid("latency.ms", format!("bad delay {ms}")));
                }
            }
            LatencySpec::Explicit { delays_ms } => {
                if delays_ms.len() != n {
                    return Err(invalid(
                        "latency.delays_ms",
                        format!("matrix is {}x?, expected {n}x{n}", delays_ms.len()),
                    ));
                }
                for (i, row) in delays_ms.iter().enumerate() {
                    if row.len() != n {
                        return Err(invalid(
                            "latency.delays_ms",
                            format!("row {i} has {} entries, expected {n}", row.len()),
                        ));
                    }
                    for &d in row {
                        if !d.is_finite() || d < 0.0 {
                            return Err(invalid("latency.delays_ms", format!("bad delay {d}")));
                        }
                    }
                }
            }
            LatencySpec::Table1 => {}
        }
        let (lo, hi) = self.timeouts.tee_ms;
        if !(lo > 0.0 && hi > lo) {
            return Err(invalid("timeouts.tee_ms", format!("bad interval [{lo}, {hi})")));
        }
        let (lo, hi) = self.timeouts.non_tee_ms;
        if !(lo > 0.0 && hi > lo) {
            return Err(invalid("timeouts.non_tee_ms", format!("bad interval [{lo}, {hi})")));
        }
        if self.workload.batch == 0 {
            return Err(invalid("workload.batch", "batch must be at least 1"));
        }
        if self.bound.max_time_ms <= 0.0 || !self.bound.max_time_ms.is_finite() {
            return Err(invalid("bound.max_time_ms", format!("bad bound {}", self.bound.max_time_ms)));
        }
        Ok(())
    }

    /// The effective TEE flag vector (mraft only; all-false for baselines).
    pub fn tee_flags(&self) -> Result<Vec<bool>, ScenarioError> {
        if self.protocol != Protocol::MRaft {
            if self.tee.is_some() {
                return Err(invalid("tee", "tee flags only apply to mraft"));
            }
            return Ok(vec![false; self.n]);
        }
        match &self.tee {
            Some(flags) => {
                if flags.len() != self.n {
                    return Err(invalid(
                        "tee",
                        format!("{} flags for {} nodes", flags.len(), self.n),
                    ));
                }
                Ok(flags.clone())
            }
            None => {
                let f = (self.n - 2) / 3;
                Ok((0..self.n).map(|i| i < f + 1).collect())
            }
        }
    }

    pub fn latency_matrix(&self) -> LatencyMatrix {
        match &self.latency {
            LatencySpec::Table1 => LatencyMatrix::table1(self.n),
            LatencySpec::Uniform { ms } => LatencyMatrix::uniform(self.n, *ms),
            LatencySpec::Explicit { delays_ms } => LatencyMatrix::explicit(delays_ms.clone()),
        }
    }

    pub fn run_bound(&self) -> RunBound {
        RunBound {
            max_time: SimTime::from_ms(self.bound.max_time_ms),
            commits: self.bound.commits,
        }
    }

    /// The replication quorum used in certificate-soundness checks.
    pub fn q_rep(&self) -> usize {
        match self.protocol {
            Protocol::MRaft => 2 * ((self.n - 2) / 3) + 1,
            Protocol::Raft => self.n / 2 + 1,
            Protocol::Pbft => 2 * ((self.n - 1) / 3) + 1,
        }
    }

    /// Builds the world for one seeded run. Assumes `validate` passed.
    pub fn build_world(&self, seed: u64) -> Result<World, ScenarioError> {
        let n = self.n;
        let tee = self.tee_flags()?;
        let keys: Vec<KeyPair> = (0..n)
            .map(|i| keygen(&SIM_GROUP, seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64)))
            .collect();
        let pks: Vec<u64> = keys.iter().map(|k| k.pk).collect();
        let nodes: Vec<Node> = match self.protocol {
            Protocol::MRaft => {
                let mut config = ClusterConfig::new(n, tee)
                    .map_err(|e| invalid("n", e.to_string()))?;
                if let Some(q) = self.election_quorum {
                    config = config
                        .with_election_quorum(q)
                        .map_err(|e| invalid("election_quorum", e.to_string()))?;
                }
                let opts = ReplicaOptions {
                    vote_rule: self.vote_rule,
                    non_tee_leader: self.non_tee_leader,
                    batch_max_bytes: self.batch_max_bytes,
                    heartbeat_interval: SimTime::from_ms(self.heartbeat_interval_ms),
                    cosi_phase_timeout: SimTime::from_ms(self.cosi_phase_timeout_ms),
                };
                (0..n)
                    .map(|i| {
                        Node::MRaft(Replica::new(
                            NodeId(i),
                            config.clone(),
                            opts.clone(),
                            SIM_GROUP,
                            keys[i],
                            pks.clone(),
                            NodeId(0),
                        ))
                    })
                    .collect()
            }
            Protocol::Raft => {
                let opts = RaftOptions {
                    batch_max_bytes: self.batch_max_bytes,
                    heartbeat_interval: SimTime::from_ms(self.heartbeat_interval_ms),
                };
                (0..n)
                    .map(|i| Node::Raft(RaftReplica::new(NodeId(i), n, opts.clone(), NodeId(0))))
                    .collect()
            }
            Protocol::Pbft => {
                let opts = PbftOptions { batch_max_bytes: self.batch_max_bytes };
                (0..n)
                    .map(|i| Node::Pbft(PbftReplica::new(NodeId(i), n, opts.clone())))
                    .collect()
            }
        };
        let world_opts = WorldOptions {
            tee_timeout_ms: self.timeouts.tee_ms,
            non_tee_timeout_ms: self.timeouts.non_tee_ms,
            startup_grace: SimTime::from_ms(self.startup_grace_ms),
            retry_interval: SimTime::from_ms(self.retry_interval_ms),
            gst: SimTime::from_ms(self.gst_ms),
            pre_gst_extra_ms: self.pre_gst_extra_ms,
        };
        let arrivals = super::workload::generate_workload(&self.workload, seed);
        Ok(World::new(
            nodes,
            keys,
            self.latency_matrix(),
            world_opts,
            &self.faults,
            arrivals,
            seed,
        ))
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &str) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.to_string(), source })?;
    let scenario: Scenario = serde_json::from_str(&text)
        .map_err(|source| ScenarioError::Parse { path: path.to_string(), source })?;
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::canned;

    #[test]
    fn rejects_bad_mraft_size() {
        let mut s = canned::fault_free(Protocol::MRaft, 5, 10);
        s.n = 6;
        s.tee = Some(vec![true; 6]);
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("not divisible by 3"), "{err}");
    }

    #[test]
    fn rejects_byzantine_tee_node() {
        use crate::adversary::{ByzantineStrategy, FaultAction, FaultEvent, FaultSchedule};
        let mut s = canned::fault_free(Protocol::MRaft, 5, 10);
        s.tee = Some(vec![true, true, true, false, false]);
        s.faults = FaultSchedule {
            events: vec![FaultEvent {
                at_ms: 0.0,
                action: FaultAction::Byzantine { node: 1, strategy: ByzantineStrategy::Equivocate },
            }],
        };
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("TEE"), "{err}");
    }

    #[test]
    fn defaults_fill_and_round_trip() {
        let s = canned::fault_free(Protocol::MRaft, 5, 100);
        s.validate().unwrap();
        let json = serde_json::to_string_pretty(&s).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn minimal_json_gets_defaults() {
        let json = r#"{
            "name": "minimal",
            "protocol": "mraft",
            "n": 5,
            "latency": {"kind": "uniform", "ms": 1.0},
            "workload": {"count": 10},
            "bound": {"max_time_ms": 1000.0}
        }"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        s.validate().unwrap();
        assert_eq!(s.workload.batch, 10);
        assert_eq!(s.heartbeat_interval_ms, 50.0);
        assert_eq!(s.tee_flags().unwrap(), vec![true, true, false, false, false]);
    }
}
