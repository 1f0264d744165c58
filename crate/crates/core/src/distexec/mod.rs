//! Two-node execution of NC and CC models: each node simulates only its own
//! QPU and learns the other node's mid-circuit outcomes from messages.
//!
//! Both nodes walk the same joint branch tree depth-first (outcome 0 before
//! 1). At its own measurement a node splits its local state and, when the
//! model has cross-QPU feedforward, announces each outcome with its
//! probability. At the peer's measurement it waits for those announcements.
//! The collector pairs the nodes' leaves and multiplies their factors.

mod codec;
mod transport;

use serde::{Deserialize, Serialize};

use crate::circuits::{EmbeddingMode, Instance, ModelSpec, Op, QpuRange, SchemeKind};
use crate::error::{Error, Result};
use crate::qstate::{
    self, branch_measure, control_mask, measure_probabilities, Angles, Distribution, GateOp, StateVector,
    PRUNE_PROBABILITY,
};

pub use codec::{decode_message, encode_message, frame_len, ClassicalMessage, MAX_PATH_LEN, MIN_FRAME_LEN};
pub use transport::{channel_pair, loopback_pair, ChannelEndpoint, Endpoint, ReplayEndpoint, TcpEndpoint, TransportKind};

pub const NODE_NAMES: [&str; 2] = ["A", "B"];

/// An op of one node's slice, on local qubit indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum LocalOp {
    Gate(GateOp),
    Measure { qubit: usize, event: usize },
    /// The peer measures here; its outcome arrives as a message.
    PeerEvent { event: usize },
    /// Applied when `event` (own or remote) had this outcome.
    Conditional { event: usize, outcome: u8, gate: GateOp },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSlice {
    pub node: u8,
    pub qubits: QpuRange,
    pub ops: Vec<LocalOp>,
    /// Local index of the readout qubit.
    pub readout: usize,
}

impl NodeSlice {
    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Conditionals driven by the peer's outcomes.
    pub fn incoming_conditionals(&self, events: &[ScheduledMessage]) -> usize {
        self.ops
            .iter()
            .filter(|op| matches!(op, LocalOp::Conditional { event, .. } if events[*event].sender != self.node))
            .count()
    }
}

/// A mid-circuit measurement in program order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledMessage {
    pub event: usize,
    pub sender: u8,
    /// Global qubit index.
    pub qubit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub slices: [NodeSlice; 2],
    /// Every measurement event, in program order.
    pub events: Vec<ScheduledMessage>,
    /// Events announced to the peer.
    pub schedule: Vec<ScheduledMessage>,
    pub embedding: EmbeddingMode,
    pub param_slots: usize,
    pub n_attributes: usize,
}

impl Partition {
    pub fn messaged(&self) -> bool {
        !self.schedule.is_empty()
    }
}

/// Splits a two-QPU model into per-node slices. Every gate must act inside
/// one QPU; cross-QPU influence is allowed only as classically conditioned
/// single-qubit gates.
pub fn partition_model(model: &ModelSpec) -> Result<Partition> {
    match model.scheme {
        SchemeKind::NoComm | SchemeKind::ClassicalComm => {}
        SchemeKind::QuantumComm => {
            return Err(Error::Unsupported(
                "quantum-communication models contain nonlocal two-qubit gates, which no exchange of classical \
                 outcome bits can implement"
                    .into(),
            ))
        }
        SchemeKind::NonDistributed => return Err(Error::Unsupported("a non-distributed model has a single QPU".into())),
    }
    model.validate()?;
    if model.qpus.len() != 2 || model.readout_qubits.len() != 2 {
        return Err(Error::InvalidModel("the executor needs two QPUs with one readout qubit each".into()));
    }
    let node_of = |q: usize| model.qpu_of(q).expect("validated qubit") as u8;
    let local = |g: &GateOp, node: u8| -> Result<GateOp> {
        if g.support().any(|q| node_of(q) != node) {
            return Err(Error::Unsupported(format!("gate {g:?} spans both QPUs")));
        }
        let start = model.qpus[node as usize].start;
        let mut out = g.clone();
        out.targets.iter_mut().for_each(|t| *t -= start);
        out.controls.iter_mut().for_each(|c| c.qubit -= start);
        Ok(out)
    };

    let mut events: Vec<ScheduledMessage> = Vec::new();
    let mut event_of = vec![None; model.n_qubits()];
    let mut ops: [Vec<(LocalOp, bool)>; 2] = [Vec::new(), Vec::new()];
    let mut remote = false;
    for op in model.ops() {
        match op {
            Op::Gate(g) => {
                let node = node_of(g.targets[0]);
                ops[node as usize].push((LocalOp::Gate(local(g, node)?), false));
            }
            Op::Measure { qubit } => {
                let node = node_of(*qubit);
                let event = events.len();
                events.push(ScheduledMessage { event, sender: node, qubit: *qubit });
                event_of[*qubit] = Some(event);
                let start = model.qpus[node as usize].start;
                ops[node as usize].push((LocalOp::Measure { qubit: qubit - start, event }, false));
                ops[1 - node as usize].push((LocalOp::PeerEvent { event }, true));
            }
            Op::Conditional { source, outcome, gate } => {
                let node = node_of(gate.targets[0]);
                let event = event_of[*source].expect("validated: source measured before use");
                remote |= node_of(*source) != node;
                ops[node as usize].push((LocalOp::Conditional { event, outcome: *outcome, gate: local(gate, node)? }, false));
            }
        }
    }
    // Without cross-QPU feedforward the nodes never need each other's bits.
    let slices = [0u8, 1].map(|n| {
        let q = model.qpus[n as usize];
        NodeSlice {
            node: n,
            qubits: q,
            ops: ops[n as usize].iter().filter(|(_, peer)| remote || !peer).map(|(op, _)| op.clone()).collect(),
            readout: model.readout_qubits[n as usize] - q.start,
        }
    });
    Ok(Partition {
        slices,
        schedule: if remote { events.clone() } else { Vec::new() },
        events,
        embedding: model.embedding,
        param_slots: model.param_slots,
        n_attributes: model.n_attributes(),
    })
}

/// A completed branch on one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Outcome per event known to this node.
    pub path: Vec<Option<u8>>,
    /// Product of this node's own outcome probabilities.
    pub factor: f64,
    pub readout: [f64; 2],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    /// Largest amplitude vector held by any single branch.
    pub peak_branch_amplitudes: usize,
    pub peak_live_branches: usize,
    pub leaves: usize,
    pub messages_sent: usize,
    pub messages_received: usize,
}

enum Entry {
    Start,
    Own { event: usize, outcome: u8, probability: f64 },
    Await { event: usize, outcome: u8 },
}

struct Task {
    pc: usize,
    state: Option<StateVector>,
    position: Vec<Option<usize>>,
    path: Vec<Option<u8>>,
    factor: f64,
    entry: Entry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Progress,
    Blocked,
    Done,
}

struct Node<'a> {
    slice: &'a NodeSlice,
    angles: Angles<'a>,
    messaged: bool,
    stack: Vec<Task>,
    next_seq: u32,
    expected_seq: u32,
    sent: Vec<ClassicalMessage>,
    leaves: Vec<Leaf>,
    stats: NodeStats,
}

fn known_bits(path: &[Option<u8>]) -> Vec<u8> {
    path.iter().flatten().copied().collect()
}

impl<'a> Node<'a> {
    fn new(partition: &'a Partition, node: usize, params: &'a [f64], instance: &'a Instance) -> Result<Self> {
        let slice = &partition.slices[node];
        let state = match (partition.embedding, instance) {
            (EmbeddingMode::Angle, Instance::Attributes(a)) => {
                if a.len() != partition.n_attributes {
                    return Err(Error::DimensionMismatch { expected: partition.n_attributes, got: a.len() });
                }
                StateVector::zero(slice.n_qubits())?
            }
            (EmbeddingMode::Haar, Instance::Haar(states)) => {
                let s = states.get(node).ok_or(Error::DimensionMismatch { expected: 2, got: states.len() })?;
                if s.n_qubits() != slice.n_qubits() {
                    return Err(Error::DimensionMismatch { expected: slice.n_qubits(), got: s.n_qubits() });
                }
                s.clone()
            }
            _ => return Err(Error::InvalidArgument("instance kind does not match the model's embedding".into())),
        };
        let task = Task {
            pc: 0,
            state: Some(state),
            position: (0..slice.n_qubits()).map(Some).collect(),
            path: vec![None; partition.events.len()],
            factor: 1.0,
            entry: Entry::Start,
        };
        Ok(Self {
            slice,
            angles: Angles::new(params, instance.attributes()),
            messaged: partition.messaged(),
            stack: vec![task],
            next_seq: 0,
            expected_seq: 0,
            sent: Vec::new(),
            leaves: Vec::new(),
            stats: NodeStats { peak_live_branches: 1, ..Default::default() },
        })
    }

    fn step(&mut self, ep: &mut dyn Endpoint, blocking: bool) -> Result<Step> {
        let Some(mut task) = self.stack.pop() else { return Ok(Step::Done) };
        match task.entry {
            Entry::Start => {}
            Entry::Own { event, outcome, probability } => {
                if self.messaged {
                    let msg = ClassicalMessage {
                        sequence_no: self.next_seq,
                        sender: self.slice.node,
                        branch_path: known_bits(&task.path),
                        outcome,
                        branch_probability_factor: probability,
                    };
                    ep.send(&encode_message(&msg)?)?;
                    self.next_seq += 1;
                    self.stats.messages_sent += 1;
                    self.sent.push(msg);
                }
                if task.state.is_none() {
                    return Ok(Step::Progress);
                }
                task.path[event] = Some(outcome);
                task.factor *= probability;
            }
            Entry::Await { event, outcome } => {
                let frame = if blocking {
                    ep.recv()?
                } else {
                    match ep.try_recv()? {
                        Some(f) => f,
                        None => {
                            self.stack.push(task);
                            return Ok(Step::Blocked);
                        }
                    }
                };
                let msg = decode_message(&frame)?;
                self.check_incoming(&msg, &task.path, outcome)?;
                self.expected_seq += 1;
                self.stats.messages_received += 1;
                if msg.branch_probability_factor < PRUNE_PROBABILITY {
                    return Ok(Step::Progress);
                }
                task.path[event] = Some(outcome);
            }
        }
        task.entry = Entry::Start;
        self.run(task)?;
        self.stats.peak_live_branches = self.stats.peak_live_branches.max(self.stack.len());
        Ok(Step::Progress)
    }

    fn check_incoming(&self, msg: &ClassicalMessage, path: &[Option<u8>], outcome: u8) -> Result<()> {
        let peer = 1 - self.slice.node;
        if msg.sender != peer {
            return Err(Error::Protocol(format!("message from node {} where node {peer} was expected", msg.sender)));
        }
        if msg.sequence_no != self.expected_seq {
            return Err(Error::Protocol(format!(
                "sequence gap: got {} from node {}, expected {}",
                msg.sequence_no, NODE_NAMES[peer as usize], self.expected_seq
            )));
        }
        if msg.branch_path != known_bits(path) || msg.outcome != outcome {
            return Err(Error::Protocol(format!(
                "branch desynchronized: peer at {:?}/{}, local at {:?}/{outcome}",
                msg.branch_path,
                msg.outcome,
                known_bits(path)
            )));
        }
        if !(0.0..=1.0 + 1e-12).contains(&msg.branch_probability_factor) {
            return Err(Error::Protocol(format!("probability factor {}", msg.branch_probability_factor)));
        }
        Ok(())
    }

    /// Advances `task` until it splits, waits, or finishes.
    fn run(&mut self, mut task: Task) -> Result<()> {
        let slice = self.slice;
        let state = task.state.as_mut().expect("live branch");
        self.stats.peak_branch_amplitudes = self.stats.peak_branch_amplitudes.max(state.amplitudes().len());
        while task.pc < slice.ops.len() {
            let op = &slice.ops[task.pc];
            task.pc += 1;
            match op {
                LocalOp::Gate(g) => apply_local(state, &task.position, g, &self.angles)?,
                LocalOp::Conditional { event, outcome, gate } => {
                    if task.path[*event] == Some(*outcome) {
                        apply_local(state, &task.position, gate, &self.angles)?;
                    }
                }
                LocalOp::Measure { qubit, event } => {
                    let pos = task.position[*qubit].ok_or_else(|| Error::InvalidModel(format!("qubit {qubit} measured twice")))?;
                    let mut position = task.position.clone();
                    position[*qubit] = None;
                    for p in position.iter_mut().flatten() {
                        if *p > pos {
                            *p -= 1;
                        }
                    }
                    let [b0, b1] = branch_measure(state, pos)?;
                    for b in [b1, b0] {
                        self.stack.push(Task {
                            pc: task.pc,
                            state: b.post_state,
                            position: position.clone(),
                            path: task.path.clone(),
                            factor: task.factor,
                            entry: Entry::Own { event: *event, outcome: b.outcome, probability: b.probability },
                        });
                    }
                    return Ok(());
                }
                LocalOp::PeerEvent { event } => {
                    for outcome in [1, 0] {
                        self.stack.push(Task {
                            pc: task.pc,
                            state: Some(state.clone()),
                            position: task.position.clone(),
                            path: task.path.clone(),
                            factor: task.factor,
                            entry: Entry::Await { event: *event, outcome },
                        });
                    }
                    return Ok(());
                }
            }
        }
        let pos = task.position[slice.readout].ok_or_else(|| Error::InvalidModel("readout qubit was measured".into()))?;
        let p = measure_probabilities(state, &[pos])?;
        self.leaves.push(Leaf { path: task.path, factor: task.factor, readout: [p.get(0), p.get(1)] });
        self.stats.leaves += 1;
        Ok(())
    }
}

fn apply_local(state: &mut StateVector, position: &[Option<usize>], g: &GateOp, angles: &Angles<'_>) -> Result<()> {
    let map = |q: usize| position[q].ok_or_else(|| Error::InvalidModel(format!("qubit {q} used after measurement")));
    let targets: Vec<usize> = g.targets.iter().map(|&q| map(q)).collect::<Result<_>>()?;
    for c in &g.controls {
        map(c.qubit)?;
    }
    let (cmask, cval) = control_mask(&g.controls, |q| position[q].expect("checked above"));
    let angle = g.angle.map(|a| angles.resolve(a)).transpose()?;
    qstate::apply_mapped(state.amplitudes_mut(), g.kind, &targets, cmask, cval, angle, g.matrix.as_ref());
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// One thread alternates between the nodes.
    #[default]
    Sequential,
    /// One worker thread per node.
    Threaded,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistConfig {
    pub mode: ExecMode,
    pub transport: TransportKind,
}

/// Messages each node sent, in sending order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: [Vec<ClassicalMessage>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointBranch {
    pub path: Vec<u8>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchLedger {
    pub branches: Vec<JointBranch>,
    pub total_probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistRun {
    pub distribution: Distribution,
    pub ledger: BranchLedger,
    pub transcript: Transcript,
    pub stats: [NodeStats; 2],
}

struct NodeOutput {
    leaves: Vec<Leaf>,
    sent: Vec<ClassicalMessage>,
    stats: NodeStats,
}

impl From<Node<'_>> for NodeOutput {
    fn from(n: Node<'_>) -> Self {
        Self { leaves: n.leaves, sent: n.sent, stats: n.stats }
    }
}

fn check_inputs(partition: &Partition, params: &[f64]) -> Result<()> {
    if params.len() != partition.param_slots {
        return Err(Error::DimensionMismatch { expected: partition.param_slots, got: params.len() });
    }
    Ok(())
}

/// Readout distribution of a two-node run, with its branch ledger and message
/// transcript.
pub fn run_distributed(model: &ModelSpec, params: &[f64], instance: &Instance, cfg: &DistConfig) -> Result<DistRun> {
    let partition = partition_model(model)?;
    run_partition(&partition, params, instance, cfg)
}

pub fn run_partition(partition: &Partition, params: &[f64], instance: &Instance, cfg: &DistConfig) -> Result<DistRun> {
    check_inputs(partition, params)?;
    let outputs = match cfg.transport {
        TransportKind::InProcess => {
            let (a, b) = channel_pair();
            drive(partition, params, instance, cfg.mode, a, b)?
        }
        TransportKind::Loopback { port } => {
            let (a, b) = loopback_pair(port)?;
            drive(partition, params, instance, cfg.mode, a, b)?
        }
    };
    collect(partition, outputs)
}

fn drive<E: Endpoint>(
    partition: &Partition,
    params: &[f64],
    instance: &Instance,
    mode: ExecMode,
    a: E,
    b: E,
) -> Result<[NodeOutput; 2]> {
    let mut eps = [a, b];
    match mode {
        ExecMode::Sequential => {
            let mut nodes = [Node::new(partition, 0, params, instance)?, Node::new(partition, 1, params, instance)?];
            let mut done = [false; 2];
            while !(done[0] && done[1]) {
                let mut progressed = false;
                for k in 0..2 {
                    loop {
                        match nodes[k].step(&mut eps[k], false)? {
                            Step::Progress => progressed = true,
                            Step::Blocked => break,
                            Step::Done => {
                                done[k] = true;
                                break;
                            }
                        }
                    }
                }
                if !progressed && !(done[0] && done[1]) {
                    // a frame may still be in flight on a socket
                    let waiting = (0..2).find(|&k| !done[k] && nodes[1 - k].next_seq > nodes[k].expected_seq);
                    let Some(k) = waiting else {
                        return Err(Error::Protocol("both nodes wait for messages that were never sent".into()));
                    };
                    nodes[k].step(&mut eps[k], true)?;
                }
            }
            let [na, nb] = nodes;
            Ok([na.into(), nb.into()])
        }
        ExecMode::Threaded => {
            let [ea, eb] = eps;
            std::thread::scope(|s| {
                let spawn = |k: usize, mut ep: E| {
                    s.spawn(move || -> Result<NodeOutput> {
                        let mut node = Node::new(partition, k, params, instance)?;
                        while node.step(&mut ep, true)? != Step::Done {}
                        Ok(node.into())
                    })
                };
                let ha = spawn(0, ea);
                let hb = spawn(1, eb);
                let ra = ha.join().map_err(|_| Error::Protocol("node A worker panicked".into()))?;
                let rb = hb.join().map_err(|_| Error::Protocol("node B worker panicked".into()))?;
                Ok([ra?, rb?])
            })
        }
    }
}

fn consistent(a: &[Option<u8>], b: &[Option<u8>]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.is_none() || y.is_none() || x == y)
}

fn collect(partition: &Partition, outputs: [NodeOutput; 2]) -> Result<DistRun> {
    let [oa, ob] = outputs;
    let mut probs = [0.0; 4];
    let mut branches = Vec::new();
    for la in &oa.leaves {
        for lb in &ob.leaves {
            if !consistent(&la.path, &lb.path) {
                continue;
            }
            let p = la.factor * lb.factor;
            for (bit_a, pa) in la.readout.iter().enumerate() {
                for (bit_b, pb) in lb.readout.iter().enumerate() {
                    probs[2 * bit_a + bit_b] += p * pa * pb;
                }
            }
            let path = la.path.iter().zip(&lb.path).map(|(x, y)| x.or(*y).expect("every event is known to its owner")).collect();
            branches.push(JointBranch { path, probability: p });
        }
    }
    let total: f64 = branches.iter().map(|b| b.probability).sum();
    let pruned_bound = PRUNE_PROBABILITY * (1usize << partition.events.len()) as f64;
    if (total - 1.0).abs() > 1e-10 + pruned_bound {
        return Err(Error::Protocol(format!("joint branch probabilities sum to {total}")));
    }
    Ok(DistRun {
        distribution: Distribution::new(2, probs.to_vec())?,
        ledger: BranchLedger { branches, total_probability: total },
        transcript: Transcript { messages: [oa.sent, ob.sent] },
        stats: [oa.stats, ob.stats],
    })
}

/// Re-runs each node against the peer's recorded messages, checking that it
/// sends exactly what the transcript recorded.
pub fn replay(partition: &Partition, params: &[f64], instance: &Instance, transcript: &Transcript) -> Result<Distribution> {
    check_inputs(partition, params)?;
    let mut outputs = Vec::with_capacity(2);
    for k in 0..2 {
        let mut ep = ReplayEndpoint::default();
        for m in &transcript.messages[1 - k] {
            ep.inbox.push_back(encode_message(m)?);
        }
        let mut node = Node::new(partition, k, params, instance)?;
        while node.step(&mut ep, true)? != Step::Done {}
        if node.sent != transcript.messages[k] {
            return Err(Error::Protocol(format!("node {} diverged from the transcript", NODE_NAMES[k])));
        }
        if !ep.inbox.is_empty() {
            return Err(Error::Protocol("transcript has unconsumed messages".into()));
        }
        outputs.push(NodeOutput::from(node));
    }
    let ob = outputs.pop().expect("two nodes");
    let oa = outputs.pop().expect("two nodes");
    Ok(collect(partition, [oa, ob])?.distribution)
}
