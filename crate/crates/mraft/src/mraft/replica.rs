//! The MRaft replica: TEE-leader replication with commit certificates,
//! TEE-favoured leader election with vote queueing, catch-up, and the CoSi
//! fallback path for a non-TEE leader.
//!
//! Every handler is a pure transition over `(state, input, now)`; timers and
//! randomness are owned by the simulator.

use crate::batch::{self, Request};
use crate::cluster::{
    is_more_up_to_date, ClusterConfig, LogEntry, NodeId, ReplicatedLog, Term, VoteRule,
};
use crate::crypto::{self, GroupParams, KeyPair, ParticipationBitmap};
use crate::mraft::messages::{
    CollectiveCommit, CommitCertificate, CommitProof, MRaftMsg, ProofOfLeadership, Vote,
};
use crate::step::{ClientOutcome, CommitVia, CommittedBatch, Effects, TimerKind, TimerReq};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet, VecDeque};

type Eff = Effects<MRaftMsg>;

/// What a non-TEE node does with leadership once it wins an election.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonTeeLeaderMode {
    /// Drive replication through CoSi rounds.
    #[default]
    Cosi,
    /// Stay idle (no heartbeats, no replication) so that a TEE node takes
    /// over at the next election.
    IdleWait,
}

#[derive(Debug, Clone)]
pub struct ReplicaOptions {
    pub vote_rule: VoteRule,
    pub non_tee_leader: NonTeeLeaderMode,
    pub batch_max_bytes: usize,
    pub heartbeat_interval: SimTime,
    pub cosi_phase_timeout: SimTime,
}

impl Default for ReplicaOptions {
    fn default() -> Self {
        ReplicaOptions {
            vote_rule: VoteRule::TermIndex,
            non_tee_leader: NonTeeLeaderMode::Cosi,
            batch_max_bytes: 20 * 1024,
            heartbeat_interval: SimTime::from_ms(50.0),
            cosi_phase_timeout: SimTime::from_ms(500.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Follower => "follower",
            Role::Candidate => "candidate",
            Role::Leader => "leader",
        }
    }
}

#[derive(Debug, Clone)]
struct QueuedVote {
    candidate: NodeId,
    new_term: Term,
    last: (Term, u64),
}

#[derive(Debug, Clone)]
struct AckTally {
    digest: [u8; 32],
    acks: ParticipationBitmap,
    /// Last broadcast or retransmission time, to pace resends on links
    /// slower than the heartbeat interval.
    sent_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CosiPhase {
    Commit,
    Response,
}

/// Leader-side state of one CoSi round. The leader aggregates but does not
/// co-sign; the participation bitmap covers followers only.
#[derive(Debug, Clone)]
struct CosiLeaderRound {
    round: u64,
    index: u64,
    entry_term: Term,
    digest: [u8; 32],
    msg: Vec<u8>,
    phase: CosiPhase,
    commitments: Vec<Option<u64>>,
    responses: Vec<Option<u64>>,
    participants: ParticipationBitmap,
    agg_commitment: u64,
    challenge: u64,
}

/// Follower-side state of the CoSi round it is currently co-signing.
#[derive(Debug, Clone)]
struct CosiPending {
    round: u64,
    index: u64,
    digest: [u8; 32],
    msg: Vec<u8>,
    secret: u64,
}

#[derive(Debug)]
pub struct Replica {
    id: NodeId,
    config: ClusterConfig,
    opts: ReplicaOptions,
    group: GroupParams,
    keys: KeyPair,
    pks: Vec<u64>,

    role: Role,
    current_term: Term,
    log: ReplicatedLog,
    voted_for: Option<(Term, NodeId)>,
    queued_vote: Option<QueuedVote>,
    /// Highest term ever seen in a RequestVote, granted or not. Candidacies
    /// start above it so a fresh-logged node is not perpetually out-termed by
    /// stale candidates that churn faster than it does.
    max_seen_term: Term,
    leader_id: Option<NodeId>,
    election_deadline: SimTime,

    // candidate state
    granted: ParticipationBitmap,
    collected_votes: Vec<Vote>,

    // leader state
    pending: VecDeque<Request>,
    seen_ids: HashSet<u64>,
    tallies: BTreeMap<u64, AckTally>,
    outstanding: bool,
    leadership_proof: Option<ProofOfLeadership>,
    latest_proof: Option<CommitProof>,
    cosi: Option<CosiLeaderRound>,
    next_round: u64,

    // follower-side CoSi state
    cosi_pending: Option<CosiPending>,

    nonce_ctr: u64,
}

impl Replica {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: NodeId,
        config: ClusterConfig,
        opts: ReplicaOptions,
        group: GroupParams,
        keys: KeyPair,
        pks: Vec<u64>,
        initial_leader: NodeId,
    ) -> Replica {
        let n = config.n;
        let role = if id == initial_leader { Role::Leader } else { Role::Follower };
        // the configured initial leader holds office without an election; a
        // TEE initial leader's enclave attests the whole-cluster bitmap so
        // its heartbeats carry a proof from the first tick
        let leadership_proof = if role == Role::Leader && config.is_tee(id) {
            Some(ProofOfLeadership::Enclave {
                term: Term(1),
                candidate: id,
                vote_bitmap: ParticipationBitmap::from_indices(n, 0..n),
            })
        } else {
            None
        };
        Replica {
            id,
            config,
            opts,
            group,
            keys,
            pks,
            role,
            current_term: Term(1),
            log: ReplicatedLog::new(),
            voted_for: None,
            queued_vote: None,
            max_seen_term: Term(0),
            leader_id: Some(initial_leader),
            election_deadline: SimTime::ZERO,
            granted: ParticipationBitmap::empty(n),
            collected_votes: Vec::new(),
            pending: VecDeque::new(),
            seen_ids: HashSet::new(),
            tallies: BTreeMap::new(),
            outstanding: false,
            leadership_proof,
            latest_proof: None,
            cosi: None,
            next_round: 1,
            cosi_pending: None,
            nonce_ctr: 0,
        }
    }

    /// Arms the initial timers. Called once by the simulator at world build.
    pub fn bootstrap(&mut self, now: SimTime) -> Eff {
        let mut eff = Eff::default();
        match self.role {
            Role::Leader => {
                eff.timers.push(TimerReq::At {
                    kind: TimerKind::Heartbeat,
                    at: now + self.opts.heartbeat_interval,
                });
            }
            _ => eff.timers.push(TimerReq::ElectionReset),
        }
        eff
    }

    // ---- inspection -------------------------------------------------------

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> Role {
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

    pub fn is_tee(&self) -> bool {
        self.config.is_tee(self.id)
    }

    pub fn keys(&self) -> KeyPair {
        self.keys
    }

    pub fn set_election_deadline(&mut self, at: SimTime) {
        self.election_deadline = at;
    }

    // ---- inputs -----------------------------------------------------------

    pub fn on_client_request(&mut self, reqs: Vec<Request>, now: SimTime) -> Eff {
        let mut eff = Eff::default();
        if self.role != Role::Leader {
            eff.client = Some(ClientOutcome::NotLeader(self.leader_id));
            return eff;
        }
        if !self.is_tee() && self.opts.non_tee_leader == NonTeeLeaderMode::IdleWait {
            // idle-waiting until a TEE node takes over
            eff.client = Some(ClientOutcome::NotLeader(None));
            return eff;
        }
        for r in reqs {
            if self.seen_ids.insert(r.id) {
                self.pending.push_back(r);
            }
        }
        eff.client = Some(ClientOutcome::Accepted);
        self.flush(now, &mut eff);
        eff
    }

    pub fn on_timer(&mut self, kind: TimerKind, fire_at: SimTime, now: SimTime) -> Eff {
        let mut eff = Eff::default();
        match kind {
            TimerKind::Election => self.on_election_timer(fire_at, now, &mut eff),
            TimerKind::Heartbeat => self.on_heartbeat_timer(now, &mut eff),
            TimerKind::CosiRound(round) => self.on_cosi_deadline(round, now, &mut eff),
        }
        eff
    }

    pub fn on_message(&mut self, from: NodeId, msg: MRaftMsg, now: SimTime) -> Eff {
        let mut eff = Eff::default();
        match msg {
            MRaftMsg::Append { term, prev_term, entry } => {
                self.on_append(from, term, prev_term, entry, &mut eff)
            }
            MRaftMsg::Ack { term, index, digest, signer } => {
                self.on_ack(from, term, index, digest, signer, now, &mut eff)
            }
            MRaftMsg::Cert(cert) => self.on_cert(from, cert, &mut eff),
            MRaftMsg::HeartBeat { term, leader, last_commit_index, proof } => {
                self.on_heartbeat(from, term, leader, last_commit_index, proof, &mut eff)
            }
            MRaftMsg::RequestVote { candidate, new_term, last_log_term, last_log_index } => self
                .on_request_vote(
                    from,
                    candidate,
                    new_term,
                    (last_log_term, last_log_index),
                    now,
                    &mut eff,
                ),
            MRaftMsg::Vote(vote) => self.on_vote(from, vote, now, &mut eff),
            MRaftMsg::CoSiAnnounce { term, round, entry } => {
                self.on_cosi_announce(from, term, round, entry, &mut eff)
            }
            MRaftMsg::CoSiCommitMsg { term, round, index, signer, commitment } => {
                self.on_cosi_commit(from, term, round, index, signer, commitment, now, &mut eff)
            }
            MRaftMsg::CoSiChallengeMsg { term, round, index, agg_commitment, challenge, participants } => {
                self.on_cosi_challenge(
                    from, term, round, index, agg_commitment, challenge, participants, &mut eff,
                )
            }
            MRaftMsg::CoSiResponseMsg { term, round, index, signer, digest, response } => {
                self.on_cosi_response(from, term, round, index, signer, digest, response, now, &mut eff)
            }
            MRaftMsg::CoSig(cc) => self.on_cosig(from, cc, &mut eff),
            MRaftMsg::FetchEntries { from_index } => self.on_fetch(from, from_index, &mut eff),
            MRaftMsg::EntriesResponse { entries, prev_digest, proof } => {
                self.on_entries_response(from, entries, prev_digest, proof, &mut eff)
            }
        }
        eff
    }

    // ---- helpers ----------------------------------------------------------

    fn broadcast(&self, eff: &mut Eff, msg: MRaftMsg) {
        for peer in self.config.nodes() {
            if peer != self.id {
                eff.send(peer, msg.clone());
            }
        }
    }

    fn next_nonce(&mut self) -> u64 {
        self.nonce_ctr += 1;
        self.nonce_ctr
    }

    fn sign_vote(&mut self, term: Term, candidate: NodeId) -> Vote {
        let msg = Vote::signable(term, self.id, candidate);
        let nonce = self.next_nonce();
        Vote {
            term,
            voter: self.id,
            candidate,
            sig: crypto::sign(&self.group, self.keys.sk, &msg, nonce),
        }
    }

    /// Records the valid-leader-contact side effects: fresh timeout, queued
    /// vote requests discarded.
    fn leader_contact(&mut self, eff: &mut Eff) {
        self.queued_vote = None;
        eff.timers.push(TimerReq::ElectionReset);
    }

    fn commit_through(&mut self, to: u64, top_via: CommitVia, eff: &mut Eff) {
        let newly = self.log.commit_to(to).expect("commit target validated");
        for e in newly {
            let via = if e.index == to { top_via } else { CommitVia::Prefix };
            eff.commits.push(CommittedBatch {
                term: e.term,
                index: e.index,
                digest: e.digest(),
                request_ids: batch::batch_ids(&e.request),
                via,
            });
        }
    }

    // ---- client path and replication (TEE leader) -------------------------

    fn flush(&mut self, now: SimTime, eff: &mut Eff) {
        if self.role != Role::Leader || self.outstanding {
            return;
        }
        if self.is_tee() {
            if self.pending.is_empty() {
                return;
            }
            let entry = self.build_batch_entry();
            let prev_term = self.log.last_summary().0;
            let digest = entry.digest();
            let index = entry.index;
            self.log.append(entry.clone()).expect("leader appends are contiguous");
            let mut acks = ParticipationBitmap::empty(self.config.n);
            acks.set(self.id.0);
            self.tallies.insert(index, AckTally { digest, acks, sent_at: now });
            eff.local_acks.push((self.current_term, index, digest));
            self.outstanding = true;
            self.broadcast(eff, MRaftMsg::Append { term: self.current_term, prev_term, entry });
        } else if self.opts.non_tee_leader == NonTeeLeaderMode::Cosi {
            // Fallback replication is serialized: the co-signed index must
            // immediately follow the latest committed entry, so an
            // uncommitted tail is driven through first.
            if self.log.len() == self.log.last_commit_index() {
                if self.pending.is_empty() {
                    return;
                }
                let entry = self.build_batch_entry();
                self.log.append(entry).expect("leader appends are contiguous");
            }
            self.start_cosi_round(now, eff);
        }
    }

    fn build_batch_entry(&mut self) -> LogEntry {
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
        let request_id = reqs.first().map(|r| r.id).unwrap_or(0);
        LogEntry {
            term: self.current_term,
            index: self.log.len() + 1,
            request: batch::encode_batch(&reqs),
            request_id,
        }
    }

    fn on_append(
        &mut self,
        from: NodeId,
        term: Term,
        prev_term: Term,
        entry: LogEntry,
        eff: &mut Eff,
    ) {
        if term < self.current_term || term > self.current_term {
            // stale terms are dropped; newer terms need a proof-bearing
            // heartbeat before this node follows the sender
            return;
        }
        match self.leader_id {
            Some(l) if l == from => {}
            Some(_) => {
                eff.note_evidence(from, "append-from-non-leader");
                return;
            }
            None => return,
        }
        self.leader_contact(eff);

        let j = entry.index;
        let digest = entry.digest();
        let ack = MRaftMsg::Ack { term: self.current_term, index: j, digest, signer: self.id };
        if j <= self.log.last_commit_index() {
            match self.log.get(j) {
                Some(e) if e.digest() == digest => eff.send(from, ack),
                _ => eff.note_evidence(from, "append-conflicts-with-committed"),
            }
            return;
        }
        if j <= self.log.len() {
            if self.log.get(j).map(|e| e.digest()) == Some(digest) {
                eff.send(from, ack);
                return;
            }
            // conflicting uncommitted entry: replace it if the predecessor
            // lines up, otherwise resynchronize from the committed prefix
            let pred_ok = j == 1 || self.log.term_at(j - 1) == Some(prev_term);
            if pred_ok {
                self.log.truncate_from(j).expect("above committed prefix");
                self.log.append(entry).expect("contiguous after truncation");
                eff.send(from, ack);
            } else {
                eff.send(
                    from,
                    MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 },
                );
            }
            return;
        }
        if j == self.log.len() + 1 {
            let pred_ok = j == 1 || self.log.term_at(j - 1) == Some(prev_term);
            if pred_ok {
                self.log.append(entry).expect("contiguous");
                eff.send(from, ack);
            } else {
                eff.send(
                    from,
                    MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 },
                );
            }
        } else {
            // gap
            eff.send(from, MRaftMsg::FetchEntries { from_index: self.log.len() + 1 });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_ack(
        &mut self,
        from: NodeId,
        term: Term,
        index: u64,
        digest: [u8; 32],
        signer: NodeId,
        now: SimTime,
        eff: &mut Eff,
    ) {
        if self.role != Role::Leader || !self.is_tee() || term != self.current_term {
            return;
        }
        if signer != from {
            eff.note_evidence(from, "ack-signer-mismatch");
            return;
        }
        let Some(tally) = self.tallies.get_mut(&index) else { return };
        if tally.digest != digest {
            eff.note_evidence(from, "ack-digest-mismatch");
            return;
        }
        if tally.acks.get(from.0) {
            return;
        }
        tally.acks.set(from.0);
        if tally.acks.popcount() >= self.config.q_rep && index > self.log.last_commit_index() {
            let cert = CommitCertificate {
                term: self.log.term_at(index).expect("tallied entry exists"),
                index,
                entry_digest: tally.digest,
                ack_bitmap: tally.acks.clone(),
                leader: self.id,
            };
            self.commit_through(index, CommitVia::Quorum, eff);
            self.latest_proof = Some(CommitProof::Cert(cert.clone()));
            self.tallies = self.tallies.split_off(&(index + 1));
            self.outstanding = false;
            self.broadcast(eff, MRaftMsg::Cert(cert));
            self.flush(now, eff);
        }
    }

    fn on_cert(&mut self, from: NodeId, cert: CommitCertificate, eff: &mut Eff) {
        if !cert.valid(&self.config) {
            eff.note_evidence(from, "invalid-cert");
            return;
        }
        if self.role == Role::Follower && self.leader_id == Some(from) {
            self.leader_contact(eff);
        }
        if cert.index <= self.log.last_commit_index() {
            return;
        }
        match self.log.get(cert.index) {
            Some(e) if e.digest() == cert.entry_digest => {
                self.commit_through(cert.index, CommitVia::Cert, eff);
                self.latest_proof = Some(CommitProof::Cert(cert));
            }
            Some(_) => {
                // conflicting uncommitted entry; resync from committed prefix
                eff.send(
                    from,
                    MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 },
                );
            }
            None => {
                eff.send(from, MRaftMsg::FetchEntries { from_index: self.log.len() + 1 });
            }
        }
    }

    // ---- leader election --------------------------------------------------

    fn on_election_timer(&mut self, fire_at: SimTime, now: SimTime, eff: &mut Eff) {
        if self.role == Role::Leader || fire_at != self.election_deadline {
            return;
        }
        if let Some(q) = self.queued_vote.take() {
            if self.try_grant(q.candidate, q.new_term, q.last, eff) {
                return;
            }
        }
        self.become_candidate(now, eff);
    }

    fn become_candidate(&mut self, _now: SimTime, eff: &mut Eff) {
        self.current_term = Term(self.current_term.0.max(self.max_seen_term.0) + 1);
        self.role = Role::Candidate;
        self.leader_id = None;
        self.queued_vote = None;
        self.record_vote(self.current_term, self.id);
        self.granted = ParticipationBitmap::empty(self.config.n);
        self.granted.set(self.id.0);
        let self_vote = self.sign_vote(self.current_term, self.id);
        self.collected_votes = vec![self_vote];
        let (last_log_term, last_log_index) = self.log.last_summary();
        self.broadcast(
            eff,
            MRaftMsg::RequestVote {
                candidate: self.id,
                new_term: self.current_term,
                last_log_term,
                last_log_index,
            },
        );
        eff.timers.push(TimerReq::ElectionReset);
    }

    /// Whether this node considers the current leader gone. Leaders never do;
    /// a lone spurious candidate must not be able to depose them.
    fn timeout_elapsed(&self, now: SimTime) -> bool {
        match self.role {
            Role::Leader => false,
            Role::Candidate => true,
            Role::Follower => now >= self.election_deadline,
        }
    }

    fn grant_conditions_met(&self, new_term: Term, last: (Term, u64)) -> bool {
        new_term > self.current_term
            && !matches!(self.voted_for, Some((t, _)) if t >= new_term)
            && is_more_up_to_date(self.opts.vote_rule, last, self.log.last_summary())
    }

    /// Attempts to grant a vote; adopts the higher term either way. Returns
    /// true when a vote was emitted.
    fn try_grant(
        &mut self,
        candidate: NodeId,
        new_term: Term,
        last: (Term, u64),
        eff: &mut Eff,
    ) -> bool {
        if new_term <= self.current_term {
            return false;
        }
        let grant = self.grant_conditions_met(new_term, last);
        let was_candidate = self.role == Role::Candidate;
        self.current_term = new_term;
        self.step_down();
        // granting resets the timer (standard Raft); a displaced candidate
        // has no live timer left and must re-arm even when it refuses, or it
        // would never run again. A refusing follower keeps its deadline, so
        // doomed candidates cannot postpone fresher ones indefinitely.
        if grant || was_candidate {
            eff.timers.push(TimerReq::ElectionReset);
        }
        if grant {
            self.record_vote(new_term, candidate);
            let vote = self.sign_vote(new_term, candidate);
            eff.send(candidate, MRaftMsg::Vote(vote));
        }
        grant
    }

    /// `voted_for` is a high-water mark: it never moves backwards, so a node
    /// that rejoins at a lower proven term can never vote twice in a term it
    /// already voted in.
    fn record_vote(&mut self, term: Term, candidate: NodeId) {
        if !matches!(self.voted_for, Some((t, _)) if t >= term) {
            self.voted_for = Some((term, candidate));
        }
    }

    fn step_down(&mut self) {
        self.role = Role::Follower;
        self.leader_id = None;
        self.granted = ParticipationBitmap::empty(self.config.n);
        self.collected_votes.clear();
        self.tallies.clear();
        self.outstanding = false;
        self.cosi = None;
        self.pending.clear();
    }

    fn on_request_vote(
        &mut self,
        from: NodeId,
        candidate: NodeId,
        new_term: Term,
        last: (Term, u64),
        now: SimTime,
        eff: &mut Eff,
    ) {
        if candidate != from {
            eff.note_evidence(from, "requestvote-candidate-mismatch");
            return;
        }
        if new_term.0 > self.max_seen_term.0 {
            self.max_seen_term = new_term;
        }
        if new_term <= self.current_term {
            return;
        }
        if self.role == Role::Leader {
            // leaders never stand down for a mere request; a legitimate
            // successor will present a proof of leadership instead
            return;
        }
        let leader_live =
            self.role == Role::Follower && self.leader_id.is_some() && !self.timeout_elapsed(now);
        if !leader_live {
            self.try_grant(candidate, new_term, last, eff);
            return;
        }
        // Leader still live from this node's point of view: queue the request
        // if the candidate's log is at least as up-to-date as our own; on a
        // competing request keep the more up-to-date candidate.
        if !is_more_up_to_date(self.opts.vote_rule, last, self.log.last_summary()) {
            return;
        }
        let replace = match &self.queued_vote {
            None => true,
            Some(q) => is_more_up_to_date(self.opts.vote_rule, last, q.last),
        };
        if replace {
            self.queued_vote = Some(QueuedVote { candidate, new_term, last });
        }
    }

    fn on_vote(&mut self, from: NodeId, vote: Vote, now: SimTime, eff: &mut Eff) {
        if self.role != Role::Candidate
            || vote.term != self.current_term
            || vote.candidate != self.id
        {
            return;
        }
        if vote.voter != from {
            eff.note_evidence(from, "vote-voter-mismatch");
            return;
        }
        if !vote.verify(&self.group, &self.pks) {
            eff.note_evidence(from, "vote-bad-signature");
            return;
        }
        if self.granted.get(from.0) {
            return;
        }
        self.granted.set(from.0);
        self.collected_votes.push(vote);
        if self.granted.popcount() >= self.config.q_elec {
            self.become_leader(now, eff);
        }
    }

    fn become_leader(&mut self, now: SimTime, eff: &mut Eff) {
        self.role = Role::Leader;
        self.leader_id = Some(self.id);
        self.queued_vote = None;
        self.leadership_proof = Some(if self.is_tee() {
            ProofOfLeadership::Enclave {
                term: self.current_term,
                candidate: self.id,
                vote_bitmap: self.granted.clone(),
            }
        } else {
            ProofOfLeadership::Votes(self.collected_votes.clone())
        });
        self.granted = ParticipationBitmap::empty(self.config.n);
        self.collected_votes = Vec::new();
        self.tallies.clear();
        self.outstanding = false;
        self.cosi = None;
        self.cosi_pending = None;
        self.pending.clear();
        self.seen_ids = self
            .log
            .iter()
            .flat_map(|e| batch::batch_ids(&e.request))
            .collect();
        self.broadcast(
            eff,
            MRaftMsg::HeartBeat {
                term: self.current_term,
                leader: self.id,
                last_commit_index: self.log.last_commit_index(),
                proof: self.leadership_proof.clone(),
            },
        );
        eff.timers.push(TimerReq::At {
            kind: TimerKind::Heartbeat,
            at: now + self.opts.heartbeat_interval,
        });
    }

    fn on_heartbeat(
        &mut self,
        from: NodeId,
        term: Term,
        leader: NodeId,
        last_commit_index: u64,
        proof: Option<ProofOfLeadership>,
        eff: &mut Eff,
    ) {
        if leader != from {
            eff.note_evidence(from, "heartbeat-leader-mismatch");
            return;
        }
        if term < self.current_term {
            // Reintegration: a node that churned its term while cut off from
            // the cluster steps back down to a proven leader's term, but only
            // when it is not itself following a live leader.
            let leaderless = self.role == Role::Candidate
                || (self.role == Role::Follower && self.leader_id.is_none());
            let proof_ok = proof
                .as_ref()
                .map(|p| p.valid(&self.config, &self.group, &self.pks, term, from))
                .unwrap_or(false);
            if !leaderless || !proof_ok {
                return;
            }
            self.current_term = term;
            self.step_down();
            self.leader_id = Some(from);
            self.leader_contact(eff);
            if last_commit_index > self.log.last_commit_index() {
                eff.send(
                    from,
                    MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 },
                );
            }
            return;
        }
        let adopt_needed = term > self.current_term || self.leader_id != Some(from);
        if adopt_needed {
            let proof_ok = proof
                .as_ref()
                .map(|p| p.valid(&self.config, &self.group, &self.pks, term, from))
                .unwrap_or(false);
            if !proof_ok {
                eff.note_evidence(from, "heartbeat-without-valid-proof");
                return;
            }
            self.current_term = term;
            self.step_down();
            self.leader_id = Some(from);
        }
        if self.role != Role::Follower {
            return;
        }
        self.leader_contact(eff);
        if last_commit_index > self.log.last_commit_index() {
            eff.send(
                from,
                MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 },
            );
        }
    }

    fn on_heartbeat_timer(&mut self, now: SimTime, eff: &mut Eff) {
        if self.role != Role::Leader {
            return;
        }
        if !self.is_tee() && self.opts.non_tee_leader == NonTeeLeaderMode::IdleWait {
            // stay silent so followers elect a TEE leader
            return;
        }
        self.broadcast(
            eff,
            MRaftMsg::HeartBeat {
                term: self.current_term,
                leader: self.id,
                last_commit_index: self.log.last_commit_index(),
                proof: self.leadership_proof.clone(),
            },
        );
        // retransmit outstanding appends to peers that have not acked yet,
        // covering entries lost to partitions or crashes mid-broadcast;
        // paced so in-flight acks on slow links are not mistaken for loss
        let resend_after = SimTime::from_ms(self.opts.heartbeat_interval.as_ms().max(50.0) * 4.0);
        let (n, me) = (self.config.n, self.id.0);
        let resend: Vec<(u64, Vec<usize>)> = self
            .tallies
            .iter_mut()
            .filter(|(_, tally)| now - tally.sent_at >= resend_after)
            .map(|(&index, tally)| {
                tally.sent_at = now;
                let missing = (0..n).filter(|&p| p != me && !tally.acks.get(p)).collect();
                (index, missing)
            })
            .collect();
        for (index, missing) in resend {
            let Some(entry) = self.log.get(index).cloned() else { continue };
            let prev_term = if index > 1 {
                self.log.term_at(index - 1).unwrap_or(Term(0))
            } else {
                Term(0)
            };
            for peer in missing {
                eff.send(
                    NodeId(peer),
                    MRaftMsg::Append { term: self.current_term, prev_term, entry: entry.clone() },
                );
            }
        }
        eff.timers.push(TimerReq::At {
            kind: TimerKind::Heartbeat,
            at: now + self.opts.heartbeat_interval,
        });
    }

    // ---- catch-up ---------------------------------------------------------

    fn on_fetch(&mut self, from: NodeId, from_index: u64, eff: &mut Eff) {
        if self.role != Role::Leader {
            return;
        }
        if from_index == 0 || from_index > self.log.len() {
            return;
        }
        let entries = self.log.entries_from(from_index).to_vec();
        let prev_digest = if from_index > 1 {
            self.log.get(from_index - 1).map(|e| e.digest())
        } else {
            None
        };
        eff.send(
            from,
            MRaftMsg::EntriesResponse { entries, prev_digest, proof: self.latest_proof.clone() },
        );
    }

    fn on_entries_response(
        &mut self,
        from: NodeId,
        entries: Vec<LogEntry>,
        prev_digest: Option<[u8; 32]>,
        proof: Option<CommitProof>,
        eff: &mut Eff,
    ) {
        if self.role == Role::Follower && self.leader_id == Some(from) {
            self.leader_contact(eff);
        }
        if let Some(first) = entries.first() {
            let start = first.index;
            if start > self.log.len() + 1 {
                return;
            }
            let adjacency_ok = if start <= 1 {
                true
            } else if start == self.log.last_commit_index() + 1 {
                // predecessor is committed; agreement pins it
                true
            } else {
                match (self.log.get(start - 1), prev_digest) {
                    (Some(e), Some(pd)) => e.digest() == pd,
                    _ => false,
                }
            };
            if !adjacency_ok {
                eff.send(
                    from,
                    MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 },
                );
                return;
            }
            for e in entries {
                let digest = e.digest();
                if e.index <= self.log.last_commit_index() {
                    if self.log.get(e.index).map(|x| x.digest()) != Some(digest) {
                        eff.note_evidence(from, "catchup-conflicts-with-committed");
                        return;
                    }
                    continue;
                }
                if e.index <= self.log.len() {
                    if self.log.get(e.index).map(|x| x.digest()) == Some(digest) {
                        continue;
                    }
                    self.log.truncate_from(e.index).expect("above committed prefix");
                }
                if e.index == self.log.len() + 1 {
                    self.log.append(e).expect("contiguous");
                } else {
                    eff.note_evidence(from, "catchup-non-contiguous");
                    return;
                }
            }
        }
        if let Some(p) = proof {
            if p.valid(&self.config, &self.group, &self.pks) {
                let idx = p.index();
                if idx > self.log.last_commit_index() {
                    if let Some(e) = self.log.get(idx) {
                        if e.digest() == p.entry_digest() {
                            self.commit_through(idx, CommitVia::Proof, eff);
                            self.latest_proof = Some(p);
                        }
                    }
                }
            } else {
                eff.note_evidence(from, "catchup-invalid-proof");
            }
        }
        // acknowledge the freshly installed tail so the leader's tally can
        // make progress
        if self.role == Role::Follower && self.leader_id == Some(from) {
            let (_, tail) = self.log.last_summary();
            if tail > self.log.last_commit_index() {
                if let Some(e) = self.log.get(tail) {
                    eff.send(
                        from,
                        MRaftMsg::Ack {
                            term: self.current_term,
                            index: tail,
                            digest: e.digest(),
                            signer: self.id,
                        },
                    );
                }
            }
        }
    }

    // ---- CoSi fallback (non-TEE leader) -----------------------------------

    fn start_cosi_round(&mut self, now: SimTime, eff: &mut Eff) {
        let index = self.log.last_commit_index() + 1;
        let Some(entry) = self.log.get(index).cloned() else { return };
        let digest = entry.digest();
        let msg = LogEntry::signable_bytes(entry.term, entry.index, &entry.payload_digest());
        let round = self.next_round;
        self.next_round += 1;
        self.cosi = Some(CosiLeaderRound {
            round,
            index,
            entry_term: entry.term,
            digest,
            msg,
            phase: CosiPhase::Commit,
            commitments: vec![None; self.config.n],
            responses: vec![None; self.config.n],
            participants: ParticipationBitmap::empty(self.config.n),
            agg_commitment: 0,
            challenge: 0,
        });
        self.outstanding = true;
        self.broadcast(eff, MRaftMsg::CoSiAnnounce { term: self.current_term, round, entry });
        eff.timers.push(TimerReq::At {
            kind: TimerKind::CosiRound(round),
            at: now + self.opts.cosi_phase_timeout,
        });
    }

    fn on_cosi_announce(
        &mut self,
        from: NodeId,
        term: Term,
        round: u64,
        entry: LogEntry,
        eff: &mut Eff,
    ) {
        if term != self.current_term || self.role != Role::Follower {
            return;
        }
        match self.leader_id {
            Some(l) if l == from => {}
            _ => return,
        }
        self.leader_contact(eff);
        let j = entry.index;
        if j <= self.log.last_commit_index() {
            return;
        }
        if j != self.log.last_commit_index() + 1 {
            // only the entry immediately following the committed prefix is
            // co-signed; fetch what is missing instead
            eff.send(from, MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 });
            return;
        }
        let digest = entry.digest();
        if j <= self.log.len() {
            if self.log.get(j).map(|e| e.digest()) != Some(digest) {
                self.log.truncate_from(j).expect("above committed prefix");
                self.log.append(entry.clone()).expect("contiguous");
            }
        } else {
            self.log.append(entry.clone()).expect("contiguous");
        }
        let msg = LogEntry::signable_bytes(entry.term, entry.index, &entry.payload_digest());
        let mut h = Sha256::new();
        h.update(b"cosi-secret");
        h.update(self.keys.sk.to_be_bytes());
        h.update(round.to_be_bytes());
        h.update(digest);
        let seed = u64::from_be_bytes(h.finalize()[..8].try_into().unwrap());
        let (secret, commitment) = crypto::cosi_commit(&self.group, seed);
        self.cosi_pending = Some(CosiPending { round, index: j, digest, msg, secret });
        eff.send(
            from,
            MRaftMsg::CoSiCommitMsg {
                term,
                round,
                index: j,
                signer: self.id,
                commitment,
            },
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn on_cosi_commit(
        &mut self,
        from: NodeId,
        term: Term,
        round: u64,
        index: u64,
        signer: NodeId,
        commitment: u64,
        now: SimTime,
        eff: &mut Eff,
    ) {
        if self.role != Role::Leader || term != self.current_term {
            return;
        }
        if signer != from {
            eff.note_evidence(from, "cosi-commit-signer-mismatch");
            return;
        }
        let Some(rd) = self.cosi.as_mut() else { return };
        if rd.round != round || rd.phase != CosiPhase::Commit || rd.index != index {
            return;
        }
        if rd.commitments[from.0].is_none() {
            rd.commitments[from.0] = Some(commitment);
        }
        let have = rd.commitments.iter().filter(|c| c.is_some()).count();
        if have == self.config.n - 1 {
            self.start_cosi_challenge(now, eff);
        }
    }

    fn start_cosi_challenge(&mut self, now: SimTime, eff: &mut Eff) {
        let (round, index, msg_bytes, commits, participants) = {
            let Some(rd) = self.cosi.as_ref() else { return };
            let mut participants = ParticipationBitmap::empty(rd.commitments.len());
            let mut commits = Vec::new();
            for (i, c) in rd.commitments.iter().enumerate() {
                if let Some(v) = c {
                    participants.set(i);
                    commits.push(*v);
                }
            }
            (rd.round, rd.index, rd.msg.clone(), commits, participants)
        };
        let agg = match crypto::cosi_aggregate_commitments(&self.group, &commits) {
            Ok(a) => a,
            Err(_) => {
                self.abandon_cosi_round(now, eff);
                return;
            }
        };
        let c = crypto::cosi_challenge(&self.group, agg, &msg_bytes);
        if let Some(rd) = self.cosi.as_mut() {
            rd.agg_commitment = agg;
            rd.challenge = c;
            rd.participants = participants.clone();
            rd.phase = CosiPhase::Response;
        }
        let msg = MRaftMsg::CoSiChallengeMsg {
            term: self.current_term,
            round,
            index,
            agg_commitment: agg,
            challenge: c,
            participants: participants.clone(),
        };
        for i in participants.indices() {
            eff.send(NodeId(i), msg.clone());
        }
        eff.timers.push(TimerReq::At {
            kind: TimerKind::CosiRound(round),
            at: now + self.opts.cosi_phase_timeout,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn on_cosi_challenge(
        &mut self,
        from: NodeId,
        term: Term,
        round: u64,
        index: u64,
        agg_commitment: u64,
        challenge: u64,
        participants: ParticipationBitmap,
        eff: &mut Eff,
    ) {
        if term != self.current_term || self.leader_id != Some(from) {
            return;
        }
        let Some(pending) = self.cosi_pending.as_ref() else { return };
        if pending.round != round || pending.index != index || !participants.get(self.id.0) {
            return;
        }
        // The challenge must bind the entry this node actually endorsed;
        // anything else means the leader equivocated.
        let expected = crypto::cosi_challenge(&self.group, agg_commitment, &pending.msg);
        if expected != challenge {
            eff.note_evidence(from, "cosi-challenge-binds-other-entry");
            self.cosi_pending = None;
            return;
        }
        let response = crypto::cosi_respond(&self.group, pending.secret, challenge, self.keys.sk);
        let digest = pending.digest;
        eff.send(
            from,
            MRaftMsg::CoSiResponseMsg {
                term,
                round,
                index,
                signer: self.id,
                digest,
                response,
            },
        );
        self.leader_contact(eff);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_cosi_response(
        &mut self,
        from: NodeId,
        term: Term,
        round: u64,
        index: u64,
        signer: NodeId,
        digest: [u8; 32],
        response: u64,
        now: SimTime,
        eff: &mut Eff,
    ) {
        if self.role != Role::Leader || term != self.current_term {
            return;
        }
        if signer != from {
            eff.note_evidence(from, "cosi-response-signer-mismatch");
            return;
        }
        let Some(rd) = self.cosi.as_ref() else { return };
        if rd.round != round || rd.phase != CosiPhase::Response || rd.index != index {
            return;
        }
        if !rd.participants.get(from.0) {
            return;
        }
        if digest != rd.digest {
            eff.note_evidence(from, "cosi-response-digest-mismatch");
            return;
        }
        let commitment = rd.commitments[from.0].expect("participant committed");
        if !crypto::cosi_partial_verify(&self.group, commitment, self.pks[from.0], rd.challenge, response)
        {
            eff.note_evidence(from, "cosi-partial-invalid");
            self.abandon_cosi_round(now, eff);
            return;
        }
        let rd = self.cosi.as_mut().unwrap();
        if rd.responses[from.0].is_none() {
            rd.responses[from.0] = Some(response);
        }
        let have = rd.participants.indices().filter(|&i| rd.responses[i].is_some()).count();
        if have == rd.participants.popcount() {
            self.finish_cosi_round(now, eff);
        }
    }

    fn finish_cosi_round(&mut self, now: SimTime, eff: &mut Eff) {
        let rd = self.cosi.take().expect("round active");
        self.outstanding = false;
        let responses: Vec<u64> =
            rd.participants.indices().map(|i| rd.responses[i].expect("collected")).collect();
        let Ok(rhat) = crypto::cosi_aggregate_responses(&self.group, &responses) else {
            return;
        };
        if rd.participants.popcount() < self.config.q_rep {
            // not enough co-signers partook; leave the entry uncommitted
            return;
        }
        let cc = CollectiveCommit {
            term: rd.entry_term,
            index: rd.index,
            entry_digest: rd.digest,
            cosig: crypto::CollectiveSignature {
                bitmap: rd.participants.clone(),
                aggregate_commitment: rd.agg_commitment,
                aggregate_response: rhat,
            },
        };
        self.commit_through(rd.index, CommitVia::CoSig, eff);
        self.latest_proof = Some(CommitProof::CoSig(cc.clone()));
        self.broadcast(eff, MRaftMsg::CoSig(cc));
        self.flush(now, eff);
    }

    fn abandon_cosi_round(&mut self, now: SimTime, eff: &mut Eff) {
        self.cosi = None;
        self.outstanding = false;
        // retried on the next deadline tick via flush
        self.flush(now, eff);
    }

    fn on_cosi_deadline(&mut self, round: u64, now: SimTime, eff: &mut Eff) {
        if self.role != Role::Leader {
            return;
        }
        let Some(rd) = self.cosi.as_ref() else {
            // round already finished or abandoned; use the tick to retry a
            // pending entry if one exists
            self.flush(now, eff);
            return;
        };
        if rd.round != round {
            return;
        }
        match rd.phase {
            CosiPhase::Commit => {
                let have = rd.commitments.iter().filter(|c| c.is_some()).count();
                if have >= self.config.q_rep {
                    self.start_cosi_challenge(now, eff);
                } else {
                    self.abandon_cosi_round(now, eff);
                }
            }
            CosiPhase::Response => self.abandon_cosi_round(now, eff),
        }
    }

    fn on_cosig(&mut self, from: NodeId, cc: CollectiveCommit, eff: &mut Eff) {
        if cc.index <= self.log.last_commit_index() {
            return;
        }
        if !cc.valid(&self.config, &self.group, &self.pks) {
            eff.note_evidence(from, "invalid-cosig");
            return;
        }
        if self.role == Role::Follower && self.leader_id == Some(from) {
            self.leader_contact(eff);
        }
        match self.log.get(cc.index) {
            Some(e) if e.digest() == cc.entry_digest => {
                self.commit_through(cc.index, CommitVia::CoSig, eff);
                self.latest_proof = Some(CommitProof::CoSig(cc));
            }
            _ => {
                eff.send(
                    from,
                    MRaftMsg::FetchEntries { from_index: self.log.last_commit_index() + 1 },
                );
            }
        }
    }
}
