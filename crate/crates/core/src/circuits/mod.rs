//! QCNN model programs for the four communication schemes.
//!
//! A [`ModelSpec`] is a symbolic gate program: an ordered list of layers whose
//! ops are gates, mid-circuit measurements, or classically conditioned gates.
//! [`to_deferred`] rewrites conditioned gates into quantum-controlled ones so
//! the program becomes measurement-free until readout.

mod builder;
mod exec;
mod program;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{Control, GateOp};

pub use builder::{
    brick_pairs, build_model, build_model_with, conv_sublayer, embed_params, embedding_gates, embedding_layer, pooling_layer,
    ModelConfig, PoolingOutput, SlotAllocator,
};
pub use exec::{forward, forward_branching, forward_deferred, initial_state, BranchingRun, Instance};
pub use program::Program;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    NonDistributed,
    NoComm,
    ClassicalComm,
    QuantumComm,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [Self::NonDistributed, Self::NoComm, Self::ClassicalComm, Self::QuantumComm];
    pub const DISTRIBUTED: [SchemeKind; 3] = [Self::NoComm, Self::ClassicalComm, Self::QuantumComm];

    pub fn n_qpus(self) -> usize {
        match self {
            Self::NonDistributed => 1,
            _ => 2,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::NonDistributed => "non",
            Self::NoComm => "nc",
            Self::ClassicalComm => "cc",
            Self::QuantumComm => "qc",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "non" | "non-dqml" | "nondistributed" => Ok(Self::NonDistributed),
            "nc" | "nocomm" => Ok(Self::NoComm),
            "cc" | "classicalcomm" => Ok(Self::ClassicalComm),
            "qc" | "quantumcomm" => Ok(Self::QuantumComm),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolingKind {
    Standard,
    Dumb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingMode {
    /// Hadamard then RotY(attribute) per qubit.
    Angle,
    /// Each QPU starts in a per-instance Haar-random state.
    Haar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alignment {
    Aligned,
    Offset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Embedding,
    ConvSubLayer,
    Pooling,
    DumbPooling,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Gate(GateOp),
    /// Mid-circuit measurement; the qubit is not touched again except as a
    /// classical source.
    Measure { qubit: usize },
    /// Gate applied only when `source` was measured as `outcome`.
    Conditional { source: usize, outcome: u8, gate: GateOp },
}

impl Op {
    pub fn gate(&self) -> Option<&GateOp> {
        match self {
            Op::Gate(g) | Op::Conditional { gate: g, .. } => Some(g),
            Op::Measure { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Alignment>,
    pub ops: Vec<Op>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpuRange {
    pub start: usize,
    pub end: usize,
}

impl QpuRange {
    pub fn contains(&self, q: usize) -> bool {
        (self.start..self.end).contains(&q)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementEvent {
    pub qubit: usize,
    pub layer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub scheme: SchemeKind,
    pub pooling: PoolingKind,
    pub embedding: EmbeddingMode,
    pub qubits_per_qpu: usize,
    pub sublayers: usize,
    pub qpus: Vec<QpuRange>,
    pub layers: Vec<LayerSpec>,
    pub param_slots: usize,
    /// Mid-circuit measurements in program order. After [`to_deferred`] these
    /// qubits are measured at the end alongside the readout.
    pub measurement_schedule: Vec<MeasurementEvent>,
    /// One readout qubit per QPU, in QPU order.
    pub readout_qubits: Vec<usize>,
}

impl ModelSpec {
    /// Assembles a hand-written program and checks its structural validity.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        scheme: SchemeKind,
        embedding: EmbeddingMode,
        qpus: Vec<QpuRange>,
        ops: Vec<Op>,
        param_slots: usize,
        readout_qubits: Vec<usize>,
    ) -> Result<Self> {
        let measurement_schedule = ops
            .iter()
            .filter_map(|op| match op {
                Op::Measure { qubit } => Some(MeasurementEvent { qubit: *qubit, layer: 0 }),
                _ => None,
            })
            .collect();
        let qubits_per_qpu = qpus.first().map(QpuRange::len).unwrap_or(0);
        let model = Self {
            scheme,
            pooling: PoolingKind::Standard,
            embedding,
            qubits_per_qpu,
            sublayers: 0,
            qpus,
            layers: vec![LayerSpec { kind: LayerKind::Custom, alignment: None, ops }],
            param_slots,
            measurement_schedule,
            readout_qubits,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_qubits(&self) -> usize {
        self.qpus.last().map(|r| r.end).unwrap_or(0)
    }

    pub fn n_outcomes(&self) -> usize {
        1 << self.readout_qubits.len()
    }

    pub fn ops(&self) -> impl Iterator<Item = &Op> {
        self.layers.iter().flat_map(|l| l.ops.iter())
    }

    pub fn qpu_of(&self, qubit: usize) -> Option<usize> {
        self.qpus.iter().position(|r| r.contains(qubit))
    }

    /// Number of data attributes consumed by the angle embedding.
    pub fn n_attributes(&self) -> usize {
        self.ops()
            .filter_map(|op| match op.gate()?.angle? {
                crate::qstate::AngleRef::Attribute(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn has_mid_circuit_measurement(&self) -> bool {
        self.ops().any(|op| !matches!(op, Op::Gate(_)))
    }

    pub fn is_deferred(&self) -> bool {
        !self.has_mid_circuit_measurement()
    }

    /// Reference count of every parameter slot.
    pub fn slot_references(&self) -> Vec<usize> {
        let mut counts = vec![0; self.param_slots];
        for op in self.ops() {
            if let Some(slot) = op.gate().and_then(GateOp::param_slot) {
                if slot < counts.len() {
                    counts[slot] += 1;
                }
            }
        }
        counts
    }

    /// Structural checks: valid gates, slots in range, QPU ranges tiling the
    /// register, measured qubits used afterwards only as classical sources.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits();
        if n == 0 || n > crate::qstate::MAX_QUBITS {
            return Err(Error::InvalidModel(format!("register of {n} qubits")));
        }
        let mut expected_start = 0;
        for r in &self.qpus {
            if r.start != expected_start || r.is_empty() {
                return Err(Error::InvalidModel("QPU ranges must tile the register".into()));
            }
            expected_start = r.end;
        }
        let mut measured = vec![false; n];
        for op in self.ops() {
            match op {
                Op::Measure { qubit } => {
                    if *qubit >= n {
                        return Err(Error::QubitOutOfRange { index: *qubit, n_qubits: n });
                    }
                    if measured[*qubit] {
                        return Err(Error::InvalidModel(format!("qubit {qubit} measured twice")));
                    }
                    measured[*qubit] = true;
                }
                Op::Gate(g) | Op::Conditional { gate: g, .. } => {
                    g.validate(n)?;
                    if let Some(slot) = g.param_slot() {
                        if slot >= self.param_slots {
                            return Err(Error::MissingParameter { slot, len: self.param_slots });
                        }
                    }
                    if let Some(q) = g.targets.iter().chain(g.controls.iter().map(|c| &c.qubit)).find(|q| measured[**q]) {
                        return Err(Error::InvalidModel(format!("qubit {q} used after its mid-circuit measurement")));
                    }
                    if let Op::Conditional { source, outcome, .. } = op {
                        if *source >= n || !measured[*source] {
                            return Err(Error::InvalidModel(format!("conditional on unmeasured qubit {source}")));
                        }
                        if *outcome > 1 {
                            return Err(Error::InvalidModel(format!("outcome {outcome} is not a bit")));
                        }
                    }
                }
            }
        }
        for &r in &self.readout_qubits {
            if r >= n || measured[r] {
                return Err(Error::InvalidModel(format!("readout qubit {r} invalid or measured mid-circuit")));
            }
        }
        Ok(())
    }

    /// Checks the builder's structural promises: exact slot accounting and the
    /// communication pattern allowed by the scheme.
    pub fn check_invariants(&self) -> Result<()> {
        self.validate()?;
        if let Some(slot) = self.slot_references().iter().position(|&c| c != 1) {
            return Err(Error::InvalidModel(format!("slot {slot} is not referenced exactly once")));
        }
        for op in self.ops() {
            let (cross_two_qubit, cross_conditional) = match op {
                Op::Measure { .. } => (false, false),
                Op::Gate(g) => (self.spans_qpus(g.support()), false),
                Op::Conditional { source, gate, .. } => {
                    (self.spans_qpus(gate.support()), self.spans_qpus(gate.support().chain([*source])))
                }
            };
            let ok = match self.scheme {
                SchemeKind::NonDistributed | SchemeKind::NoComm => !cross_two_qubit && !cross_conditional,
                SchemeKind::ClassicalComm => !cross_two_qubit && (!cross_conditional || op.gate().unwrap().targets.len() == 1),
                SchemeKind::QuantumComm => {
                    !cross_conditional && (!cross_two_qubit || op.gate().map(|g| g.targets.len() == 2).unwrap_or(false))
                }
            };
            if !ok {
                return Err(Error::InvalidModel(format!("op {op:?} violates the {} communication pattern", self.scheme)));
            }
        }
        Ok(())
    }

    fn spans_qpus(&self, mut qubits: impl Iterator<Item = usize>) -> bool {
        let Some(first) = qubits.next().map(|q| self.qpu_of(q)) else {
            return false;
        };
        qubits.any(|q| self.qpu_of(q) != first)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: ModelSpec = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }
}

/// Rewrites every classically conditioned gate into a gate controlled by the
/// (not yet measured) source qubit and drops mid-circuit measurements; those
/// qubits are implicitly measured at the end. Conditioning on outcome 0
/// becomes a control on `|0>`.
pub fn to_deferred(model: &ModelSpec) -> ModelSpec {
    let mut out = model.clone();
    for layer in &mut out.layers {
        layer.ops = std::mem::take(&mut layer.ops)
            .into_iter()
            .filter_map(|op| match op {
                Op::Gate(g) => Some(Op::Gate(g)),
                Op::Measure { .. } => None,
                Op::Conditional { source, outcome, gate } => {
                    Some(Op::Gate(gate.with_control(Control { qubit: source, state: outcome == 1 })))
                }
            })
            .collect();
    }
    out
}
