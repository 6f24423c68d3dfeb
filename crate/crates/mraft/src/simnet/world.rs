//! The deterministic discrete-event simulator: one virtual clock, one seeded
//! generator, an ordered event queue, and the replayable trace.

use crate::adversary::{ByzContext, ByzantineStrategy, FaultAction, FaultSchedule, InboundAction};
use crate::baselines::pbft::{PbftMsg, PbftReplica};
use crate::baselines::raft::{RaftMsg, RaftReplica, RaftRole};
use crate::batch::Request;
use crate::cluster::NodeId;
use crate::crypto::{GroupParams, KeyPair, SIM_GROUP};
use crate::mraft::replica::{Replica, Role};
use crate::mraft::MRaftMsg;
use crate::simnet::latency::LatencyMatrix;
use crate::simnet::trace::{short_digest, Trace, TraceRecord};
use crate::step::{ClientOutcome, CommitVia, Effects, TimerKind, TimerReq};
use crate::time::SimTime;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

/// Protocol-generic message body.
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    MRaft(MRaftMsg),
    Raft(RaftMsg),
    Pbft(PbftMsg),
}

impl Body {
    pub fn label(&self) -> &'static str {
        match self {
            Body::MRaft(m) => m.label(),
            Body::Raft(m) => m.label(),
            Body::Pbft(m) => m.label(),
        }
    }

    fn trace_fields(&self) -> (Option<u64>, Option<u64>, Option<String>) {
        let (term, index, digest) = match self {
            Body::MRaft(m) => m.trace_fields(),
            Body::Raft(m) => m.trace_fields(),
            Body::Pbft(m) => m.trace_fields(),
        };
        (term.map(|t| t.0), index, digest.map(|d| short_digest(&d)))
    }

    fn trace_note(&self) -> String {
        match self {
            Body::MRaft(m) => m.trace_note(),
            _ => String::new(),
        }
    }
}

/// One replica of whichever protocol the scenario runs.
#[derive(Debug)]
pub enum Node {
    MRaft(Replica),
    Raft(RaftReplica),
    Pbft(PbftReplica),
}

impl Node {
    fn bootstrap(&mut self, now: SimTime) -> Effects<Body> {
        match self {
            Node::MRaft(r) => lift(r.bootstrap(now), Body::MRaft),
            Node::Raft(r) => lift(r.bootstrap(now), Body::Raft),
            Node::Pbft(_) => Effects::default(),
        }
    }

    fn on_message(&mut self, from: NodeId, body: Body, now: SimTime) -> Effects<Body> {
        match (self, body) {
            (Node::MRaft(r), Body::MRaft(m)) => lift(r.on_message(from, m, now), Body::MRaft),
            (Node::Raft(r), Body::Raft(m)) => lift(r.on_message(from, m, now), Body::Raft),
            (Node::Pbft(r), Body::Pbft(m)) => lift(r.on_message(from, m, now), Body::Pbft),
            _ => Effects::default(),
        }
    }

    fn on_timer(&mut self, kind: TimerKind, fire_at: SimTime, now: SimTime) -> Effects<Body> {
        match self {
            Node::MRaft(r) => lift(r.on_timer(kind, fire_at, now), Body::MRaft),
            Node::Raft(r) => lift(r.on_timer(kind, fire_at, now), Body::Raft),
            Node::Pbft(_) => Effects::default(),
        }
    }

    fn on_client_request(&mut self, reqs: Vec<Request>, now: SimTime) -> Effects<Body> {
        match self {
            Node::MRaft(r) => lift(r.on_client_request(reqs, now), Body::MRaft),
            Node::Raft(r) => lift(r.on_client_request(reqs, now), Body::Raft),
            Node::Pbft(r) => lift(r.on_client_request(reqs, now), Body::Pbft),
        }
    }

    fn set_election_deadline(&mut self, at: SimTime) {
        match self {
            Node::MRaft(r) => r.set_election_deadline(at),
            Node::Raft(r) => r.set_election_deadline(at),
            Node::Pbft(_) => {}
        }
    }

    pub fn role_label(&self) -> &'static str {
        match self {
            Node::MRaft(r) => r.role().label(),
            Node::Raft(r) => r.role().label(),
            Node::Pbft(r) => {
                if r.is_primary() {
                    "leader"
                } else {
                    "follower"
                }
            }
        }
    }

    pub fn current_term(&self) -> u64 {
        match self {
            Node::MRaft(r) => r.current_term().0,
            Node::Raft(r) => r.current_term().0,
            Node::Pbft(_) => 0,
        }
    }

    pub fn is_leader(&self) -> bool {
        match self {
            Node::MRaft(r) => r.role() == Role::Leader,
            Node::Raft(r) => r.role() == RaftRole::Leader,
            Node::Pbft(r) => r.is_primary(),
        }
    }

    pub fn is_tee(&self) -> bool {
        match self {
            Node::MRaft(r) => r.is_tee(),
            _ => false,
        }
    }

    /// Digest of the log entry at `index`, if held.
    pub fn entry_digest(&self, index: u64) -> Option<[u8; 32]> {
        match self {
            Node::MRaft(r) => r.log().get(index).map(|e| e.digest()),
            Node::Raft(r) => r.log().get(index).map(|e| e.digest()),
            Node::Pbft(r) => r.executed_digest(index),
        }
    }

    pub fn last_commit_index(&self) -> u64 {
        match self {
            Node::MRaft(r) => r.log().last_commit_index(),
            Node::Raft(r) => r.log().last_commit_index(),
            Node::Pbft(r) => r.executed_count(),
        }
    }
}

fn lift<M>(eff: Effects<M>, wrap: impl Fn(M) -> Body) -> Effects<Body> {
    Effects {
        out: eff.out.into_iter().map(|(to, m)| (to, wrap(m))).collect(),
        commits: eff.commits,
        timers: eff.timers,
        evidence: eff.evidence,
        local_acks: eff.local_acks,
        client: eff.client,
    }
}

#[derive(Debug, Clone)]
enum Payload {
    Deliver { mid: u64, from: usize, to: usize, body: Body },
    Timer { node: usize, kind: TimerKind },
    Inject { reqs: Vec<Request> },
    ClientTick,
    Fault(FaultAction),
}

#[derive(Debug)]
struct Event {
    at: SimTime,
    seq: u64,
    payload: Payload,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone)]
pub struct WorldOptions {
    /// Election timeout interval for TEE nodes (and all Raft nodes), in ms.
    pub tee_timeout_ms: (f64, f64),
    /// Election timeout interval for non-TEE nodes, in ms.
    pub non_tee_timeout_ms: (f64, f64),
    /// Added to election deadlines drawn at t=0, covering initial delivery
    /// of the first leader message across the widest link.
    pub startup_grace: SimTime,
    /// Client retransmit interval for unconfirmed requests.
    pub retry_interval: SimTime,
    /// Global stabilization time: before it, deliveries get extra adversarial
    /// delay up to `pre_gst_extra_ms`.
    pub gst: SimTime,
    pub pre_gst_extra_ms: f64,
}

impl Default for WorldOptions {
    fn default() -> Self {
        WorldOptions {
            tee_timeout_ms: (150.0, 300.0),
            non_tee_timeout_ms: (450.0, 600.0),
            startup_grace: SimTime::from_ms(300.0),
            retry_interval: SimTime::from_ms(500.0),
            gst: SimTime::ZERO,
            pre_gst_extra_ms: 0.0,
        }
    }
}

/// When a run stops: at `max_time`, or earlier once every live node has
/// committed `commits` batches.
#[derive(Debug, Clone, Copy)]
pub struct RunBound {
    pub max_time: SimTime,
    pub commits: Option<u64>,
}

/// Aggregate observations the harness turns into a report.
#[derive(Debug, Default, Clone)]
pub struct RunStats {
    /// Leader-side batch latency: append broadcast to quorum commit, ms.
    pub commit_latencies_ms: Vec<f64>,
    /// Client-side request latency: first injection to first honest commit, ms.
    pub request_latencies_ms: Vec<f64>,
    pub committed_per_node: Vec<u64>,
    pub confirmed_requests: usize,
    /// Every leadership assumption observed: (term, node, tee flag).
    pub leader_history: Vec<(u64, usize, bool)>,
    pub elections: usize,
}

pub struct World {
    nodes: Vec<Node>,
    keys: Vec<KeyPair>,
    group: GroupParams,
    crashed: Vec<bool>,
    byz: Vec<Option<ByzantineStrategy>>,
    byz_nonce: Vec<u64>,
    /// Group id per node while a partition is active.
    partition: Option<Vec<usize>>,
    clock: SimTime,
    queue: BinaryHeap<Event>,
    seq: u64,
    mid: u64,
    rng: ChaCha8Rng,
    trace: Trace,
    latency: LatencyMatrix,
    opts: WorldOptions,
    // client state
    pending: BTreeMap<u64, Request>,
    confirmed: BTreeSet<u64>,
    inject_time: HashMap<u64, SimTime>,
    believed_leader: usize,
    tick_scheduled: bool,
    // metrics
    stats: RunStats,
    append_start: Vec<HashMap<u64, SimTime>>,
    /// First honest commit per index: (short digest, time). Drives the
    /// durability snapshot taken whenever a node assumes leadership.
    committed_index: BTreeMap<u64, (String, SimTime)>,
}

impl World {
    pub fn new(
        nodes: Vec<Node>,
        keys: Vec<KeyPair>,
        latency: LatencyMatrix,
        opts: WorldOptions,
        schedule: &FaultSchedule,
        arrivals: Vec<(SimTime, Vec<Request>)>,
        seed: u64,
    ) -> World {
        let n = nodes.len();
        assert_eq!(latency.n(), n, "latency matrix size must match node count");
        let believed_leader = nodes.iter().position(Node::is_leader).unwrap_or(0);
        let mut world = World {
            nodes,
            keys,
            group: SIM_GROUP,
            crashed: vec![false; n],
            byz: vec![None; n],
            byz_nonce: vec![0; n],
            partition: None,
            clock: SimTime::ZERO,
            queue: BinaryHeap::new(),
            seq: 0,
            mid: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Trace::new(),
            latency,
            opts,
            pending: BTreeMap::new(),
            confirmed: BTreeSet::new(),
            inject_time: HashMap::new(),
            believed_leader,
            tick_scheduled: false,
            stats: RunStats { committed_per_node: vec![0; n], ..RunStats::default() },
            append_start: vec![HashMap::new(); n],
            committed_index: BTreeMap::new(),
        };
        for ev in &schedule.events {
            world.push_event(SimTime::from_ms(ev.at_ms), Payload::Fault(ev.action.clone()));
        }
        for (at, reqs) in arrivals {
            world.push_event(at, Payload::Inject { reqs });
        }
        for i in 0..n {
            if world.nodes[i].is_leader() {
                // configured initial leadership: recorded like any other
                // assumption of office, but not counted as an election
                let term = world.nodes[i].current_term();
                let tee = world.nodes[i].is_tee();
                let mut rec = TraceRecord::new(SimTime::ZERO, "role");
                rec.from = Some(i);
                rec.term = Some(term);
                rec.note = format!("role:leader,tee:{}", tee as u8);
                world.record(rec);
                world.stats.leader_history.push((term, i, tee));
            }
            let eff = world.nodes[i].bootstrap(SimTime::ZERO);
            world.process_effects(i, eff);
        }
        world
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn crashed(&self, node: usize) -> bool {
        self.crashed[node]
    }

    pub fn pending_requests(&self) -> usize {
        self.pending.len()
    }

    fn push_event(&mut self, at: SimTime, payload: Payload) {
        self.seq += 1;
        self.queue.push(Event { at, seq: self.seq, payload });
    }

    fn record(&mut self, rec: TraceRecord) {
        self.trace.push(rec);
    }

    fn partitioned(&self, a: usize, b: usize) -> bool {
        match &self.partition {
            Some(groups) => groups[a] != groups[b],
            None => false,
        }
    }

    /// Runs until the bound. Returns the number of events processed.
    pub fn run(&mut self, bound: RunBound) -> u64 {
        let mut steps = 0;
        loop {
            if let Some(c) = bound.commits {
                let done = (0..self.nodes.len())
                    .filter(|&i| !self.crashed[i])
                    .all(|i| self.stats.committed_per_node[i] >= c);
                if done {
                    break;
                }
            }
            let Some(next_at) = self.queue.peek().map(|e| e.at) else { break };
            if next_at > bound.max_time {
                break;
            }
            self.step();
            steps += 1;
        }
        steps
    }

    /// Processes the earliest event.
    pub fn step(&mut self) {
        let Some(ev) = self.queue.pop() else { return };
        debug_assert!(ev.at >= self.clock, "clock must not go backwards");
        self.clock = ev.at;
        match ev.payload {
            Payload::Fault(action) => self.apply_fault(action),
            Payload::Deliver { mid, from, to, body } => self.deliver(mid, from, to, body),
            Payload::Timer { node, kind } => self.fire_timer(node, kind, ev.at),
            Payload::Inject { reqs } => self.client_inject(reqs),
            Payload::ClientTick => self.client_tick(),
        }
    }

    fn apply_fault(&mut self, action: FaultAction) {
        match action {
            FaultAction::Crash { node } => {
                self.crashed[node] = true;
                let mut rec = TraceRecord::new(self.clock, "crash");
                rec.from = Some(node);
                self.record(rec);
            }
            FaultAction::Byzantine { node, strategy } => {
                self.byz[node] = Some(strategy);
                let mut rec = TraceRecord::new(self.clock, "byzantine");
                rec.from = Some(node);
                rec.note = format!("strategy:{}", strategy.label());
                self.record(rec);
            }
            FaultAction::Partition { groups } => {
                let n = self.nodes.len();
                // unlisted nodes form one implicit remainder group
                let mut assignment = vec![groups.len(); n];
                for (gid, g) in groups.iter().enumerate() {
                    for &node in g {
                        assignment[node] = gid;
                    }
                }
                let note = groups
                    .iter()
                    .map(|g| {
                        g.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
                    })
                    .collect::<Vec<_>>()
                    .join("|");
                self.partition = Some(assignment);
                let mut rec = TraceRecord::new(self.clock, "partition");
                rec.note = format!("groups:{note}");
                self.record(rec);
            }
            FaultAction::Heal => {
                self.partition = None;
                self.record(TraceRecord::new(self.clock, "heal"));
            }
        }
    }

    fn deliver(&mut self, mid: u64, from: usize, to: usize, body: Body) {
        if self.crashed[to] {
            self.record_msg("drop", mid, from, to, &body, "reason:crashed");
            return;
        }
        if self.partitioned(from, to) {
            self.record_msg("drop", mid, from, to, &body, "reason:partition");
            return;
        }
        self.record_msg("deliver", mid, from, to, &body, "");
        if let Some(strategy) = self.byz[to] {
            let mut ctx = ByzContext {
                id: NodeId(to),
                n: self.nodes.len(),
                keys: self.keys[to],
                group: self.group,
                nonce: &mut self.byz_nonce[to],
            };
            if let InboundAction::Consume(extra) =
                strategy.intercept_inbound(&mut ctx, NodeId(from), &body)
            {
                let mut eff = Effects::default();
                for (peer, msg) in extra {
                    eff.send(peer, msg);
                }
                self.process_effects(to, eff);
                return;
            }
        }
        let before = (self.nodes[to].role_label(), self.nodes[to].current_term());
        let eff = self.nodes[to].on_message(NodeId(from), body, self.clock);
        self.process_effects(to, eff);
        self.note_role_change(to, before);
    }

    fn fire_timer(&mut self, node: usize, kind: TimerKind, fire_at: SimTime) {
        if self.crashed[node] {
            return;
        }
        let before = (self.nodes[node].role_label(), self.nodes[node].current_term());
        let eff = self.nodes[node].on_timer(kind, fire_at, self.clock);
        self.process_effects(node, eff);
        self.note_role_change(node, before);
    }

    /// Picks the live node currently claiming leadership at the highest term.
    fn current_leader(&self) -> usize {
        let mut best: Option<(u64, usize)> = None;
        for (i, node) in self.nodes.iter().enumerate() {
            if !self.crashed[i] && node.is_leader() {
                let term = node.current_term();
                if best.map(|(t, _)| term >= t).unwrap_or(true) {
                    best = Some((term, i));
                }
            }
        }
        best.map(|(_, i)| i).unwrap_or(self.believed_leader)
    }

    fn client_inject(&mut self, reqs: Vec<Request>) {
        for r in &reqs {
            self.inject_time.entry(r.id).or_insert(self.clock);
            if !self.confirmed.contains(&r.id) {
                self.pending.insert(r.id, r.clone());
            }
        }
        self.send_to_leader(reqs);
        self.ensure_tick();
    }

    fn client_tick(&mut self) {
        self.tick_scheduled = false;
        if self.pending.is_empty() {
            return;
        }
        let reqs: Vec<Request> = self.pending.values().cloned().collect();
        self.send_to_leader(reqs);
        self.ensure_tick();
    }

    fn send_to_leader(&mut self, reqs: Vec<Request>) {
        let target = self.current_leader();
        self.believed_leader = target;
        if self.crashed[target] || reqs.is_empty() {
            return;
        }
        let before = (self.nodes[target].role_label(), self.nodes[target].current_term());
        let eff = self.nodes[target].on_client_request(reqs, self.clock);
        if let Some(ClientOutcome::NotLeader(hint)) = &eff.client {
            if let Some(h) = hint {
                if !self.crashed[h.0] {
                    self.believed_leader = h.0;
                }
            }
        }
        self.process_effects(target, eff);
        self.note_role_change(target, before);
    }

    fn ensure_tick(&mut self) {
        if !self.tick_scheduled && !self.pending.is_empty() {
            self.tick_scheduled = true;
            let at = self.clock + self.opts.retry_interval;
            self.push_event(at, Payload::ClientTick);
        }
    }

    fn record_msg(&mut self, kind: &str, mid: u64, from: usize, to: usize, body: &Body, extra: &str) {
        let (term, index, digest) = body.trace_fields();
        let mut rec = TraceRecord::new(self.clock, kind);
        rec.from = Some(from);
        rec.to = Some(to);
        rec.term = term;
        rec.index = index;
        rec.digest = digest;
        let mut note = format!("msg:{},mid:{}", body.label(), mid);
        let body_note = body.trace_note();
        if !body_note.is_empty() {
            note.push(',');
            note.push_str(&body_note);
        }
        if !extra.is_empty() {
            note.push(',');
            note.push_str(extra);
        }
        rec.note = note;
        self.record(rec);
    }

    fn process_effects(&mut self, node: usize, eff: Effects<Body>) {
        let Effects { out, commits, timers, evidence, local_acks, client: _ } = eff;
        for (to, body) in out {
            let body = if let Some(strategy) = self.byz[node] {
                let mut ctx = ByzContext {
                    id: NodeId(node),
                    n: self.nodes.len(),
                    keys: self.keys[node],
                    group: self.group,
                    nonce: &mut self.byz_nonce[node],
                };
                match strategy.rewrite_outbound(&mut ctx, to, body) {
                    Some(b) => b,
                    None => {
                        // muted: the suppression itself is visible
                        let mut rec = TraceRecord::new(self.clock, "drop");
                        rec.from = Some(node);
                        rec.to = Some(to.0);
                        rec.note = "reason:mute".into();
                        self.record(rec);
                        continue;
                    }
                }
            } else {
                body
            };
            self.track_append_start(node, &body);
            self.mid += 1;
            let mid = self.mid;
            self.record_msg("send", mid, node, to.0, &body, "");
            let jitter = SimTime::from_ms(self.rng.gen_range(0.0..1.0));
            let mut delay = self.latency.delay(node, to.0) + jitter;
            if self.clock < self.opts.gst && self.opts.pre_gst_extra_ms > 0.0 {
                delay += SimTime::from_ms(self.rng.gen_range(0.0..self.opts.pre_gst_extra_ms));
            }
            self.push_event(self.clock + delay, Payload::Deliver {
                mid,
                from: node,
                to: to.0,
                body,
            });
        }
        for (term, index, digest) in local_acks {
            let mut rec = TraceRecord::new(self.clock, "ackself");
            rec.from = Some(node);
            rec.term = Some(term.0);
            rec.index = Some(index);
            rec.digest = Some(short_digest(&digest));
            self.record(rec);
        }
        for ev in evidence {
            let mut rec = TraceRecord::new(self.clock, "evidence");
            rec.from = Some(node);
            rec.to = Some(ev.about.0);
            rec.note = format!("what:{}", ev.what);
            self.record(rec);
        }
        for cb in commits {
            let digest = short_digest(&cb.digest);
            let mut rec = TraceRecord::new(self.clock, "commit");
            rec.from = Some(node);
            rec.term = Some(cb.term.0);
            rec.index = Some(cb.index);
            rec.digest = Some(digest.clone());
            rec.note = format!("via:{},nreq:{}", cb.via.label(), cb.request_ids.len());
            self.record(rec);
            self.stats.committed_per_node[node] += 1;
            if self.byz[node].is_none() {
                self.committed_index.entry(cb.index).or_insert((digest, self.clock));
                for id in &cb.request_ids {
                    if self.confirmed.insert(*id) {
                        self.pending.remove(id);
                        if let Some(t0) = self.inject_time.get(id) {
                            self.stats
                                .request_latencies_ms
                                .push((self.clock - *t0).as_ms());
                        }
                    }
                }
            }
            if matches!(cb.via, CommitVia::Quorum | CommitVia::CoSig) {
                if let Some(start) = self.append_start[node].remove(&cb.index) {
                    self.stats.commit_latencies_ms.push((self.clock - start).as_ms());
                }
            }
        }
        for treq in timers {
            match treq {
                TimerReq::ElectionReset => {
                    let (lo, hi) = match &self.nodes[node] {
                        Node::MRaft(r) => {
                            if r.is_tee() {
                                self.opts.tee_timeout_ms
                            } else {
                                self.opts.non_tee_timeout_ms
                            }
                        }
                        _ => self.opts.tee_timeout_ms,
                    };
                    let draw = SimTime::from_ms(self.rng.gen_range(lo..hi));
                    let grace = if self.clock == SimTime::ZERO {
                        self.opts.startup_grace
                    } else {
                        SimTime::ZERO
                    };
                    let deadline = self.clock + draw + grace;
                    self.nodes[node].set_election_deadline(deadline);
                    self.push_event(deadline, Payload::Timer {
                        node,
                        kind: TimerKind::Election,
                    });
                }
                TimerReq::At { kind, at } => {
                    self.push_event(at, Payload::Timer { node, kind });
                }
            }
        }
    }

    /// First broadcast of an entry marks the start of its commit-latency
    /// window at the proposing node.
    fn track_append_start(&mut self, node: usize, body: &Body) {
        let index = match body {
            Body::MRaft(MRaftMsg::Append { entry, .. }) => Some(entry.index),
            Body::MRaft(MRaftMsg::CoSiAnnounce { entry, .. }) => Some(entry.index),
            Body::Raft(RaftMsg::Append { entry, .. }) => Some(entry.index),
            Body::Pbft(PbftMsg::PrePrepare { seq, .. }) => Some(*seq),
            _ => None,
        };
        if let Some(i) = index {
            self.append_start[node].entry(i).or_insert(self.clock);
        }
    }

    /// Lowest commit count among live nodes; drives commit-bounded runs.
    pub fn min_live_commits(&self) -> u64 {
        (0..self.nodes.len())
            .filter(|&i| !self.crashed[i])
            .map(|i| self.stats.committed_per_node[i])
            .min()
            .unwrap_or(0)
    }

    fn note_role_change(&mut self, node: usize, before: (&'static str, u64)) {
        let after = (self.nodes[node].role_label(), self.nodes[node].current_term());
        if after == before {
            return;
        }
        let tee = self.nodes[node].is_tee();
        let mut rec = TraceRecord::new(self.clock, "role");
        rec.from = Some(node);
        rec.term = Some(after.1);
        rec.note = format!("role:{},tee:{}", after.0, tee as u8);
        self.record(rec);
        if after.0 == "leader" && before.0 != "leader" {
            self.stats.leader_history.push((after.1, node, tee));
            self.stats.elections += 1;
            // durability snapshot: the new leader must hold every entry any
            // honest node has committed so far
            let snapshot: Vec<(u64, SimTime)> =
                self.committed_index.iter().map(|(i, (_, t))| (*i, *t)).collect();
            for (index, _) in snapshot {
                let held = self.nodes[node].entry_digest(index).map(|d| short_digest(&d));
                let mut rec = TraceRecord::new(self.clock, "leaderlog");
                rec.from = Some(node);
                rec.term = Some(after.1);
                rec.index = Some(index);
                rec.digest = held;
                self.record(rec);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::FaultEvent;
    use crate::batch::Request;
    use crate::cluster::ClusterConfig;
    use crate::crypto::keygen;
    use crate::mraft::replica::ReplicaOptions;

    fn mraft_world(
        tee: Vec<bool>,
        schedule: FaultSchedule,
        arrivals: Vec<(SimTime, Vec<Request>)>,
        seed: u64,
    ) -> World {
        let n = tee.len();
        let config = ClusterConfig::new(n, tee).unwrap();
        let keys: Vec<KeyPair> = (0..n).map(|i| keygen(&SIM_GROUP, 1000 + i as u64)).collect();
        let pks: Vec<u64> = keys.iter().map(|k| k.pk).collect();
        let nodes = (0..n)
            .map(|i| {
                Node::MRaft(Replica::new(
                    NodeId(i),
                    config.clone(),
                    ReplicaOptions::default(),
                    SIM_GROUP,
                    keys[i],
                    pks.clone(),
                    NodeId(0),
                ))
            })
            .collect();
        World::new(
            nodes,
            keys,
            LatencyMatrix::uniform(n, 1.0),
            WorldOptions::default(),
            &schedule,
            arrivals,
            seed,
        )
    }

    fn reqs(range: std::ops::Range<u64>) -> Vec<Request> {
        range.map(|id| Request { id, payload: vec![id as u8; 4] }).collect()
    }

    #[test]
    fn fault_free_run_commits_everywhere() {
        let tee = vec![true, true, false, true, false];
        let mut w = mraft_world(tee, FaultSchedule::default(), vec![
            (SimTime::ZERO, reqs(0..10)),
        ], 7);
        w.run(RunBound { max_time: SimTime::from_ms(5_000.0), commits: Some(1) });
        assert!(w.min_live_commits() >= 1, "all nodes should commit the batch");
        assert_eq!(w.pending_requests(), 0);
        assert_eq!(w.stats().request_latencies_ms.len(), 10);
        assert!(w.stats().commit_latencies_ms.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn leader_crash_elects_tee_successor_and_recovers() {
        let tee = vec![true, true, false, true, false];
        let schedule = FaultSchedule {
            events: vec![FaultEvent { at_ms: 400.0, action: FaultAction::Crash { node: 0 } }],
        };
        let mut w = mraft_world(tee, schedule, vec![
            (SimTime::ZERO, reqs(0..4)),
            (SimTime::from_ms(1_000.0), reqs(100..104)),
        ], 21);
        w.run(RunBound { max_time: SimTime::from_ms(10_000.0), commits: Some(2) });
        assert!(w.min_live_commits() >= 2, "cluster should recover after the crash");
        let new_leaders: Vec<_> = w
            .stats()
            .leader_history
            .iter()
            .filter(|(_, node, _)| *node != 0)
            .collect();
        assert!(!new_leaders.is_empty(), "someone must take over");
        assert!(new_leaders.iter().all(|(_, _, tee)| *tee), "TEE node should win");
    }

    #[test]
    fn same_seed_same_trace_digest() {
        let run = |seed| {
            let tee = vec![true, true, false, true, false];
            let schedule = FaultSchedule {
                events: vec![FaultEvent { at_ms: 400.0, action: FaultAction::Crash { node: 0 } }],
            };
            let mut w = mraft_world(tee, schedule, vec![(SimTime::ZERO, reqs(0..6))], seed);
            w.run(RunBound { max_time: SimTime::from_ms(3_000.0), commits: None });
            w.trace().digest()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn partition_drops_cross_group_traffic_until_heal() {
        let tee = vec![true, true, false, true, false];
        let schedule = FaultSchedule {
            events: vec![
                FaultEvent {
                    at_ms: 0.0,
                    action: FaultAction::Partition { groups: vec![vec![0, 1]] },
                },
                FaultEvent { at_ms: 2_000.0, action: FaultAction::Heal },
            ],
        };
        let mut w = mraft_world(tee, schedule, vec![(SimTime::ZERO, reqs(0..3))], 11);
        w.run(RunBound { max_time: SimTime::from_ms(8_000.0), commits: Some(1) });
        let recs = w.trace().records();
        assert!(recs.iter().any(|r| r.kind == "drop" && r.note_value("reason") == Some("partition")));
        assert!(w.min_live_commits() >= 1, "commit should land after heal");
    }
}
