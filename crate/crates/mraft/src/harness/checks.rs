//! Trace-level invariant checkers. Every checker works from the trace alone
//! plus the scenario's quorum size, so a saved trace can be re-verified
//! without replaying the run.

use crate::simnet::trace::{Trace, TraceRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub at_ms: f64,
    pub detail: String,
}

fn violation(invariant: &str, rec: &TraceRecord, detail: String) -> Violation {
    Violation { invariant: invariant.to_string(), at_ms: rec.t.as_ms(), detail }
}

/// Inputs the checkers cannot recover from the trace itself.
#[derive(Debug, Clone, Copy)]
pub struct CheckContext {
    /// Replication quorum: minimum distinct ack / co-sign events backing a
    /// certificate.
    pub q_rep: usize,
}

/// Runs every checker and returns all violations found.
pub fn check_trace(trace: &Trace, ctx: CheckContext) -> Vec<Violation> {
    let records = trace.records();
    let byz = byzantine_nodes(records);
    let mut out = Vec::new();
    out.extend(check_clock_monotonic(records));
    out.extend(check_no_spontaneous_messages(records));
    out.extend(check_agreement(records, &byz));
    out.extend(check_durability(records, &byz));
    out.extend(check_election_safety(records));
    out.extend(check_certificate_soundness(records, ctx.q_rep));
    out
}

/// Nodes flagged Byzantine at any point; their commits are not trusted.
fn byzantine_nodes(records: &[TraceRecord]) -> BTreeSet<usize> {
    records
        .iter()
        .filter(|r| r.kind == "byzantine")
        .filter_map(|r| r.from)
        .collect()
}

fn check_clock_monotonic(records: &[TraceRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    for pair in records.windows(2) {
        if pair[1].t < pair[0].t {
            out.push(violation(
                "CLOCK-MONOTONICITY",
                &pair[1],
                format!("time goes backwards: {} after {}", pair[1].t, pair[0].t),
            ));
        }
    }
    out
}

fn check_no_spontaneous_messages(records: &[TraceRecord]) -> Vec<Violation> {
    let mut sent: HashSet<u64> = HashSet::new();
    let mut out = Vec::new();
    for rec in records {
        let mid = rec.note_value("mid").and_then(|v| v.parse::<u64>().ok());
        match (rec.kind.as_str(), mid) {
            ("send", Some(mid)) => {
                sent.insert(mid);
            }
            ("deliver", Some(mid)) | ("drop", Some(mid)) => {
                if !sent.contains(&mid) {
                    out.push(violation(
                        "NO-SPONTANEOUS-MESSAGES",
                        rec,
                        format!("{} of mid {mid} without a prior send", rec.kind),
                    ));
                }
            }
            ("deliver", None) => {
                out.push(violation(
                    "NO-SPONTANEOUS-MESSAGES",
                    rec,
                    "delivery record without a message id".to_string(),
                ));
            }
            _ => {}
        }
    }
    out
}

/// AGREEMENT: any two honest commits at the same index carry the same digest.
fn check_agreement(records: &[TraceRecord], byz: &BTreeSet<usize>) -> Vec<Violation> {
    let mut first: BTreeMap<u64, (String, usize)> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in records {
        if rec.kind != "commit" {
            continue;
        }
        let (Some(node), Some(index), Some(digest)) = (rec.from, rec.index, rec.digest.as_ref())
        else {
            continue;
        };
        if byz.contains(&node) {
            continue;
        }
        match first.get(&index) {
            None => {
                first.insert(index, (digest.clone(), node));
            }
            Some((d0, n0)) if d0 != digest => {
                out.push(violation(
                    "AGREEMENT",
                    rec,
                    format!("index {index}: node {node} committed {digest}, node {n0} committed {d0}"),
                ));
            }
            Some(_) => {}
        }
    }
    out
}

/// COMMITTED-PREFIX DURABILITY: at each leadership change, the new leader's
/// log (snapshotted in `leaderlog` records) holds every entry an honest node
/// had committed by then.
fn check_durability(records: &[TraceRecord], byz: &BTreeSet<usize>) -> Vec<Violation> {
    let mut committed: BTreeMap<u64, String> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in records {
        match rec.kind.as_str() {
            "commit" => {
                if let (Some(node), Some(index), Some(digest)) =
                    (rec.from, rec.index, rec.digest.as_ref())
                {
                    if !byz.contains(&node) {
                        committed.entry(index).or_insert_with(|| digest.clone());
                    }
                }
            }
            "leaderlog" => {
                let (Some(node), Some(index)) = (rec.from, rec.index) else { continue };
                let Some(expected) = committed.get(&index) else { continue };
                match rec.digest.as_ref() {
                    None => out.push(violation(
                        "DURABILITY",
                        rec,
                        format!("new leader {node} is missing committed entry {index}"),
                    )),
                    Some(d) if d != expected => out.push(violation(
                        "DURABILITY",
                        rec,
                        format!(
                            "new leader {node} holds {d} at committed index {index}, expected {expected}"
                        ),
                    )),
                    Some(_) => {}
                }
            }
            _ => {}
        }
    }
    out
}

/// ELECTION SAFETY: at most one node assumes leadership per term.
fn check_election_safety(records: &[TraceRecord]) -> Vec<Violation> {
    let mut leaders: BTreeMap<u64, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in records {
        if rec.kind != "role" || rec.note_value("role") != Some("leader") {
            continue;
        }
        let (Some(node), Some(term)) = (rec.from, rec.term) else { continue };
        match leaders.get(&term) {
            None => {
                leaders.insert(term, node);
            }
            Some(&n0) if n0 != node => out.push(violation(
                "ELECTION-SAFETY",
                rec,
                format!("term {term} has two leaders: {n0} and {node}"),
            )),
            Some(_) => {}
        }
    }
    out
}

/// CERTIFICATE SOUNDNESS: every broadcast Cert / CoSig is backed by at least
/// `q_rep` distinct ack / co-sign events for the exact (term, index, digest).
fn check_certificate_soundness(records: &[TraceRecord], q_rep: usize) -> Vec<Violation> {
    // (term, index, digest) -> distinct supporting nodes
    let mut acks: HashMap<(u64, u64, String), BTreeSet<usize>> = HashMap::new();
    let mut responses: HashMap<(u64, u64, String), BTreeSet<usize>> = HashMap::new();
    for rec in records {
        let supporter = match rec.kind.as_str() {
            "send" => rec.from,
            "ackself" => rec.from,
            _ => None,
        };
        let (Some(node), Some(term), Some(index), Some(digest)) =
            (supporter, rec.term, rec.index, rec.digest.as_ref())
        else {
            continue;
        };
        let key = (term, index, digest.clone());
        if rec.kind == "ackself" {
            acks.entry(key).or_default().insert(node);
        } else {
            match rec.note_value("msg") {
                Some("ack") => {
                    acks.entry(key).or_default().insert(node);
                }
                Some("cosiresponse") => {
                    responses.entry(key).or_default().insert(node);
                }
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    let mut checked: HashSet<(u64, u64, String)> = HashSet::new();
    for rec in records {
        if rec.kind != "send" {
            continue;
        }
        let support = match rec.note_value("msg") {
            Some("cert") => &acks,
            Some("cosig") => &responses,
            _ => continue,
        };
        let (Some(term), Some(index), Some(digest)) = (rec.term, rec.index, rec.digest.as_ref())
        else {
            continue;
        };
        let key = (term, index, digest.clone());
        if !checked.insert(key.clone()) {
            continue;
        }
        let got = support.get(&key).map(BTreeSet::len).unwrap_or(0);
        if got < q_rep {
            out.push(violation(
                "CERTIFICATE-SOUNDNESS",
                rec,
                format!(
                    "certificate for term {term} index {index} digest {digest} backed by {got} of {q_rep} required events"
                ),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimTime;

    fn rec(t: f64, kind: &str) -> TraceRecord {
        TraceRecord::new(SimTime::from_ms(t), kind)
    }

    fn commit(t: f64, node: usize, index: u64, digest: &str) -> TraceRecord {
        let mut r = rec(t, "commit");
        r.from = Some(node);
        r.term = Some(1);
        r.index = Some(index);
        r.digest = Some(digest.to_string());
        r
    }

    #[test]
    fn agreement_catches_divergent_commit() {
        let mut tr = Trace::new();
        tr.push(commit(1.0, 0, 1, "aaaa"));
        tr.push(commit(2.0, 1, 1, "bbbb"));
        let v = check_trace(&tr, CheckContext { q_rep: 0 });
        assert!(v.iter().any(|x| x.invariant == "AGREEMENT"), "{v:?}");
    }

    #[test]
    fn byzantine_commits_are_ignored_by_agreement() {
        let mut tr = Trace::new();
        let mut b = rec(0.0, "byzantine");
        b.from = Some(1);
        tr.push(b);
        tr.push(commit(1.0, 0, 1, "aaaa"));
        tr.push(commit(2.0, 1, 1, "bbbb"));
        let v = check_trace(&tr, CheckContext { q_rep: 0 });
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn durability_catches_missing_entry() {
        let mut tr = Trace::new();
        tr.push(commit(1.0, 0, 1, "aaaa"));
        let mut l = rec(2.0, "leaderlog");
        l.from = Some(3);
        l.term = Some(2);
        l.index = Some(1);
        tr.push(l);
        let v = check_trace(&tr, CheckContext { q_rep: 0 });
        assert!(v.iter().any(|x| x.invariant == "DURABILITY"), "{v:?}");
    }

    #[test]
    fn election_safety_catches_split_term() {
        let mut tr = Trace::new();
        for node in [0, 1] {
            let mut r = rec(1.0, "role");
            r.from = Some(node);
            r.term = Some(2);
            r.note = "role:leader,tee:1".into();
            tr.push(r);
        }
        let v = check_trace(&tr, CheckContext { q_rep: 0 });
        assert!(v.iter().any(|x| x.invariant == "ELECTION-SAFETY"), "{v:?}");
    }

    #[test]
    fn certificate_soundness_needs_enough_acks() {
        let mut tr = Trace::new();
        let mut ack = rec(1.0, "send");
        ack.from = Some(1);
        ack.to = Some(0);
        ack.term = Some(1);
        ack.index = Some(1);
        ack.digest = Some("aaaa".into());
        ack.note = "msg:ack,mid:1".into();
        tr.push(ack);
        let mut cert = rec(2.0, "send");
        cert.from = Some(0);
        cert.to = Some(2);
        cert.term = Some(1);
        cert.index = Some(1);
        cert.digest = Some("aaaa".into());
        cert.note = "msg:cert,mid:2".into();
        tr.push(cert);
        let v = check_trace(&tr, CheckContext { q_rep: 3 });
        assert!(v.iter().any(|x| x.invariant == "CERTIFICATE-SOUNDNESS"), "{v:?}");
        let ok = check_trace(&tr, CheckContext { q_rep: 1 });
        assert!(ok.is_empty(), "{ok:?}");
    }

    #[test]
    fn spontaneous_delivery_is_flagged() {
        let mut tr = Trace::new();
        let mut d = rec(1.0, "deliver");
        d.from = Some(0);
        d.to = Some(1);
        d.note = "msg:append,mid:9".into();
        tr.push(d);
        let v = check_trace(&tr, CheckContext { q_rep: 0 });
        assert!(v.iter().any(|x| x.invariant == "NO-SPONTANEOUS-MESSAGES"), "{v:?}");
    }
}
