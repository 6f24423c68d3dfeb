//! Fault injection for the mixed fault model: crash faults anywhere,
//! Byzantine strategies only on non-TEE nodes.
//!
//! Strategies are static message-level filters over the controlled node's own
//! traffic. They may craft any message validly signed under that node's own
//! key; they cannot forge other nodes' signatures or enclave output, which
//! the simulator enforces structurally by only ever letting a strategy touch
//! its own node's sends and receipts.

use crate::cluster::{NodeId, Term};
use crate::crypto::{self, GroupParams, KeyPair};
use crate::mraft::messages::{MRaftMsg, Vote};
use crate::baselines::raft::RaftMsg;
use crate::simnet::world::Body;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineStrategy {
    /// Send conflicting entries for the same (term, index) to disjoint halves
    /// of the cluster.
    Equivocate,
    /// Grant a signed vote to every candidate that asks, regardless of term
    /// or log state.
    DoubleVote,
    /// Inflate the advertised last-log position in own RequestVote messages.
    StaleLie,
    /// Acknowledge entries with a corrupted digest.
    DigestCorrupt,
    /// Drop all outbound traffic.
    Mute,
}

impl ByzantineStrategy {
    pub fn label(self) -> &'static str {
        match self {
            ByzantineStrategy::Equivocate => "equivocate",
            ByzantineStrategy::DoubleVote => "doublevote",
            ByzantineStrategy::StaleLie => "stalelie",
            ByzantineStrategy::DigestCorrupt => "digestcorrupt",
            ByzantineStrategy::Mute => "mute",
        }
    }
}

/// What the controlled node knows when a strategy runs.
pub struct ByzContext<'a> {
    pub id: NodeId,
    pub n: usize,
    pub keys: KeyPair,
    pub group: GroupParams,
    pub nonce: &'a mut u64,
}

impl ByzContext<'_> {
    fn next_nonce(&mut self) -> u64 {
        *self.nonce += 1;
        *self.nonce
    }
}

/// Outcome of inbound interception.
pub enum InboundAction {
    /// Deliver to the replica unchanged.
    PassThrough,
    /// Swallow the delivery and emit these messages instead.
    Consume(Vec<(NodeId, Body)>),
}

fn corrupt_payload(bytes: &mut [u8]) {
    if let Some(last) = bytes.last_mut() {
        *last ^= 0xff;
    }
}

impl ByzantineStrategy {
    /// Rewrites one outbound message; `None` drops it.
    pub fn rewrite_outbound(
        &self,
        ctx: &mut ByzContext<'_>,
        to: NodeId,
        body: Body,
    ) -> Option<Body> {
        match self {
            ByzantineStrategy::Mute => None,
            ByzantineStrategy::Equivocate => Some(equivocate(ctx, to, body)),
            ByzantineStrategy::StaleLie => Some(stale_lie(body)),
            ByzantineStrategy::DigestCorrupt => Some(digest_corrupt(body)),
            ByzantineStrategy::DoubleVote => Some(body),
        }
    }

    /// Inspects one inbound delivery before the replica sees it.
    pub fn intercept_inbound(
        &self,
        ctx: &mut ByzContext<'_>,
        _from: NodeId,
        body: &Body,
    ) -> InboundAction {
        if *self != ByzantineStrategy::DoubleVote {
            return InboundAction::PassThrough;
        }
        match body {
            Body::MRaft(MRaftMsg::RequestVote { candidate, new_term, .. }) => {
                let msg = Vote::signable(*new_term, ctx.id, *candidate);
                let nonce = ctx.next_nonce();
                let vote = Vote {
                    term: *new_term,
                    voter: ctx.id,
                    candidate: *candidate,
                    sig: crypto::sign(&ctx.group, ctx.keys.sk, &msg, nonce),
                };
                InboundAction::Consume(vec![(*candidate, Body::MRaft(MRaftMsg::Vote(vote)))])
            }
            Body::Raft(RaftMsg::RequestVote { candidate, new_term, .. }) => InboundAction::Consume(
                vec![(
                    *candidate,
                    Body::Raft(RaftMsg::Vote { term: *new_term, voter: ctx.id }),
                )],
            ),
            _ => InboundAction::PassThrough,
        }
    }
}

/// Conflicting variant for the upper half of the cluster: same slot, altered
/// payload.
fn equivocate(ctx: &ByzContext<'_>, to: NodeId, body: Body) -> Body {
    let second_half = to.0 * 2 >= ctx.n;
    if !second_half {
        return body;
    }
    match body {
        Body::MRaft(MRaftMsg::Append { term, prev_term, mut entry }) => {
            corrupt_payload(&mut entry.request);
            Body::MRaft(MRaftMsg::Append { term, prev_term, entry })
        }
        Body::MRaft(MRaftMsg::CoSiAnnounce { term, round, mut entry }) => {
            corrupt_payload(&mut entry.request);
            Body::MRaft(MRaftMsg::CoSiAnnounce { term, round, entry })
        }
        Body::Raft(RaftMsg::Append { term, prev_term, mut entry }) => {
            corrupt_payload(&mut entry.request);
            Body::Raft(RaftMsg::Append { term, prev_term, entry })
        }
        other => other,
    }
}

fn stale_lie(body: Body) -> Body {
    match body {
        Body::MRaft(MRaftMsg::RequestVote { candidate, new_term, last_log_term, last_log_index }) => {
            Body::MRaft(MRaftMsg::RequestVote {
                candidate,
                new_term,
                last_log_term: Term(last_log_term.0 + 100),
                last_log_index: last_log_index + 100,
            })
        }
        Body::Raft(RaftMsg::RequestVote { candidate, new_term, last_log_term, last_log_index }) => {
            Body::Raft(RaftMsg::RequestVote {
                candidate,
                new_term,
                last_log_term: Term(last_log_term.0 + 100),
                last_log_index: last_log_index + 100,
            })
        }
        other => other,
    }
}

fn digest_corrupt(body: Body) -> Body {
    match body {
        Body::MRaft(MRaftMsg::Ack { term, index, mut digest, signer }) => {
            digest[0] ^= 0xff;
            Body::MRaft(MRaftMsg::Ack { term, index, digest, signer })
        }
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultAction {
    Crash { node: usize },
    Byzantine { node: usize, strategy: ByzantineStrategy },
    /// Splits the cluster: listed groups are mutually unreachable; nodes in
    /// no listed group form one implicit remainder group.
    Partition { groups: Vec<Vec<usize>> },
    Heal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at_ms: f64,
    #[serde(flatten)]
    pub action: FaultAction,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub events: Vec<FaultEvent>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("fault schedule targets node {0} outside 0..{1}")]
    NodeOutOfRange(usize, usize),
    #[error("Byzantine fault on TEE node {0}: TEE nodes can only crash")]
    ByzantineTee(usize),
    #[error("{got} faulty nodes exceed the tolerated f = {f}")]
    TooManyFaults { got: usize, f: usize },
    #[error("partition group repeats node {0}")]
    OverlappingGroups(usize),
    #[error("fault time {0} is negative or not finite")]
    BadTime(f64),
}

impl FaultSchedule {
    /// Checks the schedule against the model: at most `f` distinct faulty
    /// nodes, Byzantine faults on non-TEE nodes only.
    pub fn validate(&self, n: usize, f: usize, tee: &[bool]) -> Result<(), ScheduleError> {
        let mut faulty = std::collections::BTreeSet::new();
        for ev in &self.events {
            if !ev.at_ms.is_finite() || ev.at_ms < 0.0 {
                return Err(ScheduleError::BadTime(ev.at_ms));
            }
            match &ev.action {
                FaultAction::Crash { node } => {
                    if *node >= n {
                        return Err(ScheduleError::NodeOutOfRange(*node, n));
                    }
                    faulty.insert(*node);
                }
                FaultAction::Byzantine { node, .. } => {
                    if *node >= n {
                        return Err(ScheduleError::NodeOutOfRange(*node, n));
                    }
                    if tee.get(*node).copied().unwrap_or(false) {
                        return Err(ScheduleError::ByzantineTee(*node));
                    }
                    faulty.insert(*node);
                }
                FaultAction::Partition { groups } => {
                    let mut seen = std::collections::BTreeSet::new();
                    for g in groups {
                        for &node in g {
                            if node >= n {
                                return Err(ScheduleError::NodeOutOfRange(node, n));
                            }
                            if !seen.insert(node) {
                                return Err(ScheduleError::OverlappingGroups(node));
                            }
                        }
                    }
                }
                FaultAction::Heal => {}
            }
        }
        if faulty.len() > f {
            return Err(ScheduleError::TooManyFaults { got: faulty.len(), f });
        }
        Ok(())
    }

    /// Nodes that are Byzantine at any point in the run.
    pub fn byzantine_nodes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .events
            .iter()
            .filter_map(|ev| match ev.action {
                FaultAction::Byzantine { node, .. } => Some(node),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crash(at_ms: f64, node: usize) -> FaultEvent {
        FaultEvent { at_ms, action: FaultAction::Crash { node } }
    }

    fn byz(at_ms: f64, node: usize) -> FaultEvent {
        FaultEvent {
            at_ms,
            action: FaultAction::Byzantine { node, strategy: ByzantineStrategy::Equivocate },
        }
    }

    #[test]
    fn rejects_byzantine_tee_node() {
        let tee = [true, true, false, true, false];
        let sched = FaultSchedule { events: vec![byz(0.0, 0)] };
        assert_eq!(sched.validate(5, 1, &tee), Err(ScheduleError::ByzantineTee(0)));
        let ok = FaultSchedule { events: vec![byz(0.0, 2)] };
        assert!(ok.validate(5, 1, &tee).is_ok());
    }

    #[test]
    fn rejects_too_many_faulty_nodes() {
        let tee = [true, true, false, true, false];
        let sched = FaultSchedule { events: vec![crash(0.0, 0), byz(0.0, 2)] };
        assert_eq!(
            sched.validate(5, 1, &tee),
            Err(ScheduleError::TooManyFaults { got: 2, f: 1 })
        );
        // the same node crashing and being partitioned is one fault
        let one = FaultSchedule {
            events: vec![
                crash(10.0, 0),
                FaultEvent { at_ms: 0.0, action: FaultAction::Partition { groups: vec![vec![0, 1]] } },
            ],
        };
        assert!(one.validate(5, 1, &tee).is_ok());
    }

    #[test]
    fn rejects_overlapping_partition_groups() {
        let tee = [true, true, false, true, false];
        let sched = FaultSchedule {
            events: vec![FaultEvent {
                at_ms: 0.0,
                action: FaultAction::Partition { groups: vec![vec![0, 1], vec![1, 2]] },
            }],
        };
        assert_eq!(sched.validate(5, 1, &tee), Err(ScheduleError::OverlappingGroups(1)));
    }

    #[test]
    fn schedule_serde_round_trip() {
        let sched = FaultSchedule {
            events: vec![
                crash(500.0, 0),
                byz(0.0, 2),
                FaultEvent { at_ms: 0.0, action: FaultAction::Partition { groups: vec![vec![0, 1, 2]] } },
                FaultEvent { at_ms: 800.0, action: FaultAction::Heal },
            ],
        };
        let json = serde_json::to_string(&sched).unwrap();
        assert_eq!(serde_json::from_str::<FaultSchedule>(&json).unwrap(), sched);
    }
}
