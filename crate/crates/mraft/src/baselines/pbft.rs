//! PBFT baseline, normal-case operation only.
//!
//! Three phases per batch: the primary broadcasts a PrePrepare, every replica
//! (primary included) broadcasts Prepare, and every replica broadcasts Commit
//! once prepared. That is (n - 1) + 2n(n - 1) messages per batch. View changes
//! are out of scope; runs that would need one are terminated and excluded
//! from comparisons.

use crate::batch::{self, Request};
use crate::cluster::{LogEntry, NodeId, Term};
use crate::step::{ClientOutcome, CommitVia, CommittedBatch, Effects};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet, VecDeque};

type Eff = Effects<PbftMsg>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PbftMsg {
    PrePrepare {
        view: u64,
        seq: u64,
        entry: LogEntry,
    },
    Prepare {
        view: u64,
        seq: u64,
        digest: [u8; 32],
        node: NodeId,
    },
    Commit {
        view: u64,
        seq: u64,
        digest: [u8; 32],
        node: NodeId,
    },
}

impl PbftMsg {
    pub fn label(&self) -> &'static str {
        match self {
            PbftMsg::PrePrepare { .. } => "preprepare",
            PbftMsg::Prepare { .. } => "prepare",
            PbftMsg::Commit { .. } => "commit",
        }
    }

    pub fn trace_fields(&self) -> (Option<Term>, Option<u64>, Option<[u8; 32]>) {
        match self {
            PbftMsg::PrePrepare { view, seq, entry } => {
                (Some(Term(*view)), Some(*seq), Some(entry.digest()))
            }
            PbftMsg::Prepare { view, seq, digest, .. } => {
                (Some(Term(*view)), Some(*seq), Some(*digest))
            }
            PbftMsg::Commit { view, seq, digest, .. } => {
                (Some(Term(*view)), Some(*seq), Some(*digest))
            }
        }
    }
}

/// Per-sequence-slot progress.
#[derive(Debug, Default)]
struct Slot {
    entry: Option<LogEntry>,
    digest: Option<[u8; 32]>,
    prepares: HashSet<NodeId>,
    commits: HashSet<NodeId>,
    sent_prepare: bool,
    sent_commit: bool,
    executed: bool,
}

#[derive(Debug, Clone)]
pub struct PbftOptions {
    pub batch_max_bytes: usize,
}

impl Default for PbftOptions {
    fn default() -> Self {
        PbftOptions { batch_max_bytes: 20 * 1024 }
    }
}

#[derive(Debug)]
pub struct PbftReplica {
    id: NodeId,
    n: usize,
    f: usize,
    opts: PbftOptions,
    view: u64,
    next_seq: u64,
    next_exec: u64,
    slots: BTreeMap<u64, Slot>,
    pending: VecDeque<Request>,
    seen_ids: HashSet<u64>,
    outstanding: bool,
}

impl PbftReplica {
    /// `n` must be `3f + 1` for some `f >= 1`.
    pub fn new(id: NodeId, n: usize, opts: PbftOptions) -> PbftReplica {
        assert!(n >= 4 && (n - 1) % 3 == 0, "pbft needs n = 3f + 1, got {n}");
        PbftReplica {
            id,
            n,
            f: (n - 1) / 3,
            opts,
            view: 0,
            next_seq: 1,
            next_exec: 1,
            slots: BTreeMap::new(),
            pending: VecDeque::new(),
            seen_ids: HashSet::new(),
            outstanding: false,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn primary(&self) -> NodeId {
        NodeId((self.view as usize) % self.n)
    }

    pub fn is_primary(&self) -> bool {
        self.primary() == self.id
    }

    fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn executed_count(&self) -> u64 {
        self.next_exec - 1
    }

    /// Digest of the executed entry at `seq`, for cross-replica agreement
    /// checks.
    pub fn executed_digest(&self, seq: u64) -> Option<[u8; 32]> {
        let slot = self.slots.get(&seq)?;
        if slot.executed { slot.digest } else { None }
    }

    fn broadcast(&self, eff: &mut Eff, msg: PbftMsg) {
        for peer in 0..self.n {
            if peer != self.id.0 {
                eff.send(NodeId(peer), msg.clone());
            }
        }
    }

    pub fn on_client_request(&mut self, reqs: Vec<Request>, _now: SimTime) -> Eff {
        let mut eff = Eff::default();
        if !self.is_primary() {
            eff.client = Some(ClientOutcome::NotLeader(Some(self.primary())));
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
        if !self.is_primary() || self.outstanding || self.pending.is_empty() {
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
        let seq = self.next_seq;
        self.next_seq += 1;
        let entry = LogEntry {
            term: Term(self.view),
            index: seq,
            request: batch::encode_batch(&reqs),
            request_id: reqs.first().map(|r| r.id).unwrap_or(0),
        };
        let digest = entry.digest();
        self.outstanding = true;
        let slot = self.slots.entry(seq).or_default();
        slot.entry = Some(entry.clone());
        slot.digest = Some(digest);
        self.broadcast(eff, PbftMsg::PrePrepare { view: self.view, seq, entry });
        self.send_prepare(seq, digest, eff);
    }

    fn send_prepare(&mut self, seq: u64, digest: [u8; 32], eff: &mut Eff) {
        let slot = self.slots.entry(seq).or_default();
        if slot.sent_prepare {
            return;
        }
        slot.sent_prepare = true;
        slot.prepares.insert(self.id);
        self.broadcast(
            eff,
            PbftMsg::Prepare { view: self.view, seq, digest, node: self.id },
        );
        self.try_advance(seq, eff);
    }

    pub fn on_message(&mut self, from: NodeId, msg: PbftMsg, _now: SimTime) -> Eff {
        let mut eff = Eff::default();
        match msg {
            PbftMsg::PrePrepare { view, seq, entry } => {
                self.on_preprepare(from, view, seq, entry, &mut eff)
            }
            PbftMsg::Prepare { view, seq, digest, node } => {
                self.on_prepare(from, view, seq, digest, node, &mut eff)
            }
            PbftMsg::Commit { view, seq, digest, node } => {
                self.on_commit(from, view, seq, digest, node, &mut eff)
            }
        }
        eff
    }

    fn on_preprepare(&mut self, from: NodeId, view: u64, seq: u64, entry: LogEntry, eff: &mut Eff) {
        if view != self.view || from != self.primary() || self.is_primary() {
            return;
        }
        let digest = entry.digest();
        let slot = self.slots.entry(seq).or_default();
        match slot.digest {
            Some(d) if d != digest => {
                // conflicting pre-prepare for an accepted slot
                eff.note_evidence(from, "preprepare-equivocation");
                return;
            }
            Some(_) => {}
            None => {
                slot.entry = Some(entry);
                slot.digest = Some(digest);
            }
        }
        self.send_prepare(seq, digest, eff);
    }

    fn on_prepare(
        &mut self,
        from: NodeId,
        view: u64,
        seq: u64,
        digest: [u8; 32],
        node: NodeId,
        eff: &mut Eff,
    ) {
        if view != self.view || node != from {
            return;
        }
        let slot = self.slots.entry(seq).or_default();
        if let Some(d) = slot.digest {
            if d != digest {
                return;
            }
        }
        slot.prepares.insert(from);
        self.try_advance(seq, eff);
    }

    fn on_commit(
        &mut self,
        from: NodeId,
        view: u64,
        seq: u64,
        digest: [u8; 32],
        node: NodeId,
        eff: &mut Eff,
    ) {
        if view != self.view || node != from {
            return;
        }
        let slot = self.slots.entry(seq).or_default();
        if let Some(d) = slot.digest {
            if d != digest {
                return;
            }
        }
        slot.commits.insert(from);
        self.try_advance(seq, eff);
    }

    /// Moves a slot through prepared -> committed -> executed, executing in
    /// sequence order.
    fn try_advance(&mut self, seq: u64, eff: &mut Eff) {
        let quorum = self.quorum();
        let id = self.id;
        let view = self.view;
        {
            let Some(slot) = self.slots.get_mut(&seq) else { return };
            let prepared =
                slot.digest.is_some() && slot.sent_prepare && slot.prepares.len() >= quorum;
            if prepared && !slot.sent_commit {
                slot.sent_commit = true;
                slot.commits.insert(id);
                let digest = slot.digest.unwrap();
                self.broadcast(eff, PbftMsg::Commit { view, seq, digest, node: id });
            }
        }
        // execute any committed slots in order
        loop {
            let next = self.next_exec;
            let Some(slot) = self.slots.get_mut(&next) else { break };
            let committed = slot.digest.is_some()
                && slot.sent_commit
                && slot.commits.len() >= quorum
                && !slot.executed;
            if !committed {
                break;
            }
            slot.executed = true;
            let entry = slot.entry.clone().expect("digest implies entry");
            eff.commits.push(CommittedBatch {
                term: Term(view),
                index: next,
                digest: slot.digest.unwrap(),
                request_ids: batch::batch_ids(&entry.request),
                via: CommitVia::Quorum,
            });
            self.next_exec += 1;
            if self.is_primary() {
                self.outstanding = false;
            }
        }
        if self.is_primary() && !self.outstanding {
            self.flush(eff);
        }
    }
}
