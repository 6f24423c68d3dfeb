//! Crash-fault-tolerant Raft baseline.
//!
//! Deliberately minimal: single-entry pipeline, explicit commit notices
//! instead of a piggybacked commit index, and fetch-based log repair. The
//! happy path for one batch is exactly `Append`, `Ack`, `CommitNotice`, each
//! to or from `n - 1` followers. Acknowledgements carry no digest, which is
//! precisely the gap the Byzantine-equivocation comparison scenario exploits.

use crate::batch::{self, Request};
use crate::cluster::{is_more_up_to_date, LogEntry, NodeId, ReplicatedLog, Term, VoteRule};
use crate::step::{ClientOutcome, CommitVia, CommittedBatch, Effects, TimerKind, TimerReq};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet, VecDeque};

type Eff = Effects<RaftMsg>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaftMsg {
    Append {
        term: Term,
        prev_term: Term,
        entry: LogEntry,
    },
    Ack {
        term: Term,
        index: u64,
    },
    CommitNotice {
        term: Term,
        index: u64,
    },
    RequestVote {
        candidate: NodeId,
        new_term: Term,
        last_log_term: Term,
        last_log_index: u64,
    },
    Vote {
        term: Term,
        voter: NodeId,
    },
    HeartBeat {
        term: Term,
        leader: NodeId,
        last_commit_index: u64,
    },
    FetchEntries {
        from_index: u64,
    },
    EntriesResponse {
        entries: Vec<LogEntry>,
        prev_digest: Option<[u8; 32]>,
        commit_index: u64,
    },
}

impl RaftMsg {
    pub fn label(&self) -> &'static str {
        match self {
            RaftMsg::Append { .. } => "append",
            RaftMsg::Ack { .. } => "ack",
            RaftMsg::CommitNotice { .. } => "commitnotice",
            RaftMsg::RequestVote { .. } => "requestvote",
            RaftMsg::Vote { .. } => "vote",
            RaftMsg::HeartBeat { .. } => "heartbeat",
            RaftMsg::FetchEntries { .. } => "fetch",
            RaftMsg::EntriesResponse { .. } => "entries",
        }
    }

    pub fn trace_fields(&self) -> (Option<Term>, Option<u64>, Option<[u8; 32]>) {
        match self {
            RaftMsg::Append { term, entry, .. } => {
                (Some(*term), Some(entry.index), Some(entry.digest()))
            }
            RaftMsg::Ack { term, index } => (Some(*term), Some(*index), None),
            RaftMsg::CommitNotice { term, index } => (Some(*term), Some(*index), None),
            RaftMsg::RequestVote { new_term, last_log_index, .. } => {
                (Some(*new_term), Some(*last_log_index), None)
            }
            RaftMsg::Vote { term, .. } => (Some(*term), None, None),
            RaftMsg::HeartBeat { term, last_commit_index, .. } => {
                (Some(*term), Some(*last_commit_index), None)
            }
            RaftMsg::FetchEntries { from_index } => (None, Some(*from_index), None),
            RaftMsg::EntriesResponse { entries, .. } => {
                (None, entries.first().map(|e| e.index), None)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaftRole {
    Follower,
    Candidate,
    Leader,
}

impl RaftRole {
    pub fn label(self) -> &'static str {
        match self {
            RaftRole::Follower => "follower",
            RaftRole::Candidate => "candidate",
            RaftRole::Leader => "leader",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RaftOptions {
    pub batch_max_bytes: usize,
    pub heartbeat_interval: SimTime,
}

impl Default for RaftOptions {
    fn default() -> Self {
        RaftOptions {
            batch_max_bytes: 20 * 1024,
            heartbeat_interval: SimTime::from_ms(50.0),
        }
    }
}

#[derive(Debug)]
pub struct RaftReplica {
    id: NodeId,
    n: usize,
    opts: RaftOptions,
    role: RaftRole,
    current_term: Term,
    log: ReplicatedLog,
    voted_for: Option<(Term, NodeId)>,
    leader_id: Option<NodeId>,
    election_deadline: SimTime,
    granted: HashSet<NodeId>,
    pending: VecDeque<Request>,
    seen_ids: HashSet<u64>,
    tallies: BTreeMap<u64, HashSet<NodeId>>,
    outstanding: bool,
}

impl RaftReplica {
    pub fn new(id: NodeId, n: usize, opts: RaftOptions, initial_leader: NodeId) -> RaftReplica {
        let role = if id == initial_leader { RaftRole::Leader } else { RaftRole::Follower };
        RaftReplica {
            id,
            n,
            opts,
            role,
            current_term: Term(1),
            log: ReplicatedLog::new(),
            voted_for: None,
            leader_id: Some(initial_leader),
            election_deadline: SimTime::ZERO,
            granted: HashSet::new(),
            pending: VecDeque::new(),
            seen_ids: HashSet::new(),
            tallies: BTreeMap::new(),
            outstanding: false,
        }
    }

    pub fn quorum(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn bootstrap(&mut self, now: SimTime) -> Eff {
        let mut eff = Eff::default();
        match self.role {
            RaftRole::Leader => eff.timers.push(TimerReq::At {
                kind: TimerKind::Heartbeat,
                at: now + self.opts.heartbeat_interval,
            }),
            _ => eff.timers.push(TimerReq::ElectionReset),
        }
        eff
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> RaftRole {
        self.role
    }

    pub fn current_term(&self) -> Term {
        self.current_term
    }

    pub fn log(&self) -> &ReplicatedLog {
        &self.log
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.leader_id
    }

    pub fn set_election_deadline(&mut self, at: SimTime) {
        self.election_deadline = at;
    }

    fn broadcast(&self, eff: &mut Eff, msg: RaftMsg) {
        for peer in 0..self.n {
            if peer != self.id.0 {
                eff.send(NodeId(peer), msg.clone());
            }
        }
    }

    pub fn on_client_request(&mut self, reqs: Vec<Request>, _now: SimTime) -> Eff {
        let mut eff = Eff::default();
        if self.role != RaftRole::Leader {
            eff.client = Some(ClientOutcome::NotLeader(self.leader_id));
            return eff;
        }
        for r in reqs {
            if self.seen_ids.insert(r.id) {
                self.pending.push_back(r);
            }
        }
        eff.client = Some(ClientOutcome::Accepted);
        self.flush(&mut eff);
        eff
    }

    fn flush(&mut self, eff: &mut Eff) {
        if self.role != RaftRole::Leader || self.outstanding || self.pending.is_empty() {
            return;
        }
        let mut reqs: Vec<Request> = Vec::new();
        let mut bytes = 0usize;
        while let Some(front) = self.pending.front() {
            let sz = front.encoded_len();
            if !reqs.is_empty() && bytes + sz > self.opts.batch_max_bytes {
                break;
            }
            bytes += sz;
            reqs.push(self.pending.pop_front().unwrap());
        }
        let entry = LogEntry {
            term: self.current_term,
            index: self.log.len() + 1,
            request: batch::encode_batch(&reqs),
            request_id: reqs.first().map(|r| r.id).unwrap_or(0),
        };
        let prev_term = self.log.last_summary().0;
        let index = entry.index;
        self.log.append(entry.clone()).expect("leader appends are contiguous");
        let mut tally = HashSet::new();
        tally.insert(self.id);
        self.tallies.insert(index, tally);
        eff.local_acks.push((self.current_term, index, entry.digest()));
        self.outstanding = true;
        self.broadcast(eff, RaftMsg::Append { term: self.current_term, prev_term, entry });
    }

    pub fn on_timer(&mut self, kind: TimerKind, fire_at: SimTime, now: SimTime) -> Eff {
        let mut eff = Eff::default();
        match kind {
            TimerKind::Election => {
                if self.role != RaftRole::Leader && fire_at == self.election_deadline {
                    self.become_candidate(&mut eff);
                }
            }
            TimerKind::Heartbeat => {
                if self.role == RaftRole::Leader {
                    self.broadcast(
                        &mut eff,
                        RaftMsg::HeartBeat {
                            term: self.current_term,
                            leader: self.id,
                            last_commit_index: self.log.last_commit_index(),
                        },
                    );
                    eff.timers.push(TimerReq::At {
                        kind: TimerKind::Heartbeat,
                        at: now + self.opts.heartbeat_interval,
                    });
                }
            }
            TimerKind::CosiRound(_) => {}
        }
        eff
    }

    fn become_candidate(&mut self, eff: &mut Eff) {
        self.current_term = Term(self.current_term.0 + 1);
        self.role = RaftRole::Candidate;
        self.leader_id = None;
        self.voted_for = Some((self.current_term, self.id));
        self.granted = HashSet::from([self.id]);
        let (last_log_term, last_log_index) = self.log.last_summary();
        self.broadcast(
            eff,
            RaftMsg::RequestVote {
                candidate: self.id,
                new_term: self.current_term,
                last_log_term,
                last_log_index,
            },
        );
        eff.timers.push(TimerReq::ElectionReset);
    }

    fn adopt_term(&mut self, term: Term) {
        self.current_term = term;
        self.role = RaftRole::Follower;
        self.leader_id = None;
        self.granted.clear();
        self.tallies.clear();
        self.outstanding = false;
        self.pending.clear();
    }

    pub fn on_message(&mut self, from: NodeId, msg: RaftMsg, now: SimTime) -> Eff {
        let mut eff = Eff::default();
        match msg {
            RaftMsg::Append { term, prev_term, entry } => {
                self.on_append(from, term, prev_term, entry, &mut eff)
            }
            RaftMsg::Ack { term, index } => self.on_ack(from, term, index, &mut eff),
            RaftMsg::CommitNotice { term, index } => {
                self.on_commit_notice(from, term, index, &mut eff)
            }
            RaftMsg::RequestVote { candidate, new_term, last_log_term, last_log_index } => {
                self.on_request_vote(from, candidate, new_term, (last_log_term, last_log_index), &mut eff)
            }
            RaftMsg::Vote { term, voter } => self.on_vote(from, term, voter, now, &mut eff),
            RaftMsg::HeartBeat { term, leader, last_commit_index } => {
                self.on_heartbeat(from, term, leader, last_commit_index, &mut eff)
            }
            RaftMsg::FetchEntries { from_index } => self.on_fetch(from, from_index, &mut eff),
            RaftMsg::EntriesResponse { entries, prev_digest, commit_index } => {
                self.on_entries_response(from, entries, prev_digest, commit_index, &mut eff)
            }
        }
        eff
    }

    fn on_append(&mut self, from: NodeId, term: Term, prev_term: Term, entry: LogEntry, eff: &mut Eff) {
        if term < self.current_term {
            return;
        }
        if term > self.current_term {
            self.adopt_term(term);
        }
        // an append at the current term implies the sender leads it
        self.leader_id = Some(from);
        if self.role != RaftRole::Follower {
            self.role = RaftRole::Follower;
        }
        eff.timers.push(TimerReq::ElectionReset);
        let j = entry.index;
        let ack = RaftMsg::Ack { term: self.current_term, index: j };
        if j <= self.log.last_commit_index() {
            eff.send(from, ack);
            return;
        }
        if j <= self.log.len() {
            if self.log.get(j).map(|e| e.digest()) == Some(entry.digest()) {
                eff.send(from, ack);
                return;
            }
            let pred_ok = j == 1 || self.log.term_at(j - 1) == Some(prev_term);
            if pred_ok {
                self.log.truncate_from(j).expect("above committed prefix");
                self.log.append(entry).expect("contiguous");
                eff.send(from, ack);
            } else {
                eff.send(from, RaftMsg::FetchEntries {
                    from_index: self.log.last_commit_index() + 1,
                });
            }
            return;
        }
        if j == self.log.len() + 1 {
            let pred_ok = j == 1 || self.log.term_at(j - 1) == Some(prev_term);
            if pred_ok {
                self.log.append(entry).expect("contiguous");
                eff.send(from, ack);
            } else {
                eff.send(from, RaftMsg::FetchEntries {
                    from_index: self.log.last_commit_index() + 1,
                });
            }
        } else {
            eff.send(from, RaftMsg::FetchEntries { from_index: self.log.len() + 1 });
        }
    }

    fn on_ack(&mut self, from: NodeId, term: Term, index: u64, eff: &mut Eff) {
        if self.role != RaftRole::Leader || term != self.current_term {
            return;
        }
        let Some(tally) = self.tallies.get_mut(&index) else { return };
        if !tally.insert(from) {
            return;
        }
        if tally.len() >= self.quorum() && index > self.log.last_commit_index() {
            let newly = self.log.commit_to(index).expect("tallied entry exists");
            for e in newly {
                let via = if e.index == index { CommitVia::Quorum } else { CommitVia::Prefix };
                eff.commits.push(CommittedBatch {
                    term: e.term,
                    index: e.index,
                    digest: e.digest(),
                    request_ids: batch::batch_ids(&e.request),
                    via,
                });
            }
            self.tallies = self.tallies.split_off(&(index + 1));
            self.outstanding = false;
            self.broadcast(eff, RaftMsg::CommitNotice { term: self.current_term, index });
            self.flush(eff);
        }
    }

    fn on_commit_notice(&mut self, from: NodeId, term: Term, index: u64, eff: &mut Eff) {
        if term != self.current_term || self.leader_id != Some(from) {
            return;
        }
        eff.timers.push(TimerReq::ElectionReset);
        if index <= self.log.last_commit_index() {
            return;
        }
        if index > self.log.len() {
            eff.send(from, RaftMsg::FetchEntries { from_index: self.log.len() + 1 });
            return;
        }
        // no digest to check: the follower commits whatever it holds
        let newly = self.log.commit_to(index).expect("bounded above");
        for e in newly {
            let via = if e.index == index { CommitVia::Quorum } else { CommitVia::Prefix };
            eff.commits.push(CommittedBatch {
                term: e.term,
                index: e.index,
                digest: e.digest(),
                request_ids: batch::batch_ids(&e.request),
                via,
            });
        }
    }

    fn on_request_vote(
        &mut self,
        from: NodeId,
        candidate: NodeId,
        new_term: Term,
        last: (Term, u64),
        eff: &mut Eff,
    ) {
        if candidate != from || new_term <= self.current_term {
            return;
        }
        self.adopt_term(new_term);
        let up_to_date =
            is_more_up_to_date(VoteRule::TermIndex, last, self.log.last_summary());
        let not_voted = !matches!(self.voted_for, Some((t, _)) if t >= new_term);
        if up_to_date && not_voted {
            self.voted_for = Some((new_term, candidate));
            eff.send(candidate, RaftMsg::Vote { term: new_term, voter: self.id });
            eff.timers.push(TimerReq::ElectionReset);
        }
    }

    fn on_vote(&mut self, from: NodeId, term: Term, voter: NodeId, now: SimTime, eff: &mut Eff) {
        if self.role != RaftRole::Candidate || term != self.current_term || voter != from {
            return;
        }
        self.granted.insert(from);
        if self.granted.len() >= self.quorum() {
            self.role = RaftRole::Leader;
            self.leader_id = Some(self.id);
            self.granted.clear();
            self.tallies.clear();
            self.outstanding = false;
            self.pending.clear();
            self.seen_ids =
                self.log.iter().flat_map(|e| batch::batch_ids(&e.request)).collect();
            self.broadcast(
                eff,
                RaftMsg::HeartBeat {
                    term: self.current_term,
                    leader: self.id,
                    last_commit_index: self.log.last_commit_index(),
                },
            );
            eff.timers.push(TimerReq::At {
                kind: TimerKind::Heartbeat,
                at: now + self.opts.heartbeat_interval,
            });
        }
    }

    fn on_heartbeat(
        &mut self,
        from: NodeId,
        term: Term,
        leader: NodeId,
        last_commit_index: u64,
        eff: &mut Eff,
    ) {
        if leader != from || term < self.current_term {
            return;
        }
        if term > self.current_term {
            self.adopt_term(term);
        }
        self.leader_id = Some(from);
        self.role = RaftRole::Follower;
        eff.timers.push(TimerReq::ElectionReset);
        if last_commit_index > self.log.last_commit_index() {
            eff.send(from, RaftMsg::FetchEntries {
                from_index: self.log.last_commit_index() + 1,
            });
        }
    }

    fn on_fetch(&mut self, from: NodeId, from_index: u64, eff: &mut Eff) {
        if self.role != RaftRole::Leader || from_index == 0 || from_index > self.log.len() {
            return;
        }
        let entries = self.log.entries_from(from_index).to_vec();
        let prev_digest = if from_index > 1 {
            self.log.get(from_index - 1).map(|e| e.digest())
        } else {
            None
        };
        eff.send(from, RaftMsg::EntriesResponse {
            entries,
            prev_digest,
            commit_index: self.log.last_commit_index(),
        });
    }

    fn on_entries_response(
        &mut self,
        from: NodeId,
        entries: Vec<LogEntry>,
        prev_digest: Option<[u8; 32]>,
        commit_index: u64,
        eff: &mut Eff,
    ) {
        if self.role != RaftRole::Follower || self.leader_id != Some(from) {
            return;
        }
        eff.timers.push(TimerReq::ElectionReset);
        if let Some(first) = entries.first() {
            let start = first.index;
            if start > self.log.len() + 1 {
                return;
            }
            let adjacency_ok = start <= self.log.last_commit_index() + 1
                || match (self.log.get(start - 1), prev_digest) {
                    (Some(e), Some(pd)) => e.digest() == pd,
                    _ => false,
                };
            if !adjacency_ok {
                eff.send(from, RaftMsg::FetchEntries {
                    from_index: self.log.last_commit_index() + 1,
                });
                return;
            }
            for e in entries {
                if e.index <= self.log.last_commit_index() {
                    continue;
                }
                if e.index <= self.log.len() {
                    if self.log.get(e.index).map(|x| x.digest()) == Some(e.digest()) {
                        continue;
                    }
                    self.log.truncate_from(e.index).expect("above committed prefix");
                }
                if e.index == self.log.len() + 1 {
                    self.log.append(e).expect("contiguous");
                } else {
                    return;
                }
            }
        }
        let target = commit_index.min(self.log.len());
        if target > self.log.last_commit_index() {
            let newly = self.log.commit_to(target).expect("bounded above");
            for e in newly {
                eff.commits.push(CommittedBatch {
                    term: e.term,
                    index: e.index,
                    digest: e.digest(),
                    request_ids: batch::batch_ids(&e.request),
                    via: CommitVia::Prefix,
                });
            }
        }
        // ack the freshly installed tail so replication can make progress
        let (_, tail) = self.log.last_summary();
        if tail > self.log.last_commit_index() {
            eff.send(from, RaftMsg::Ack { term: self.current_term, index: tail });
        }
    }
}
