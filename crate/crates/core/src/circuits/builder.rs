use serde::{Deserialize, Serialize};

use super::{
    Alignment, EmbeddingMode, LayerKind, LayerSpec, MeasurementEvent, ModelSpec, Op, PoolingKind, QpuRange,
    SchemeKind,
};
use crate::error::{Error, Result};
use crate::qstate::{AngleRef, GateOp, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scheme: SchemeKind,
    pub qubits_per_qpu: usize,
    pub sublayers: usize,
    pub pooling: PoolingKind,
    pub embedding: EmbeddingMode,
}

impl ModelConfig {
    pub fn new(scheme: SchemeKind, qubits_per_qpu: usize, sublayers: usize) -> Self {
        Self { scheme, qubits_per_qpu, sublayers, pooling: PoolingKind::Standard, embedding: EmbeddingMode::Angle }
    }

    pub fn with_pooling(mut self, pooling: PoolingKind) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn with_embedding(mut self, embedding: EmbeddingMode) -> Self {
        self.embedding = embedding;
        self
    }
}

/// Hands out consecutive parameter slots.
#[derive(Debug, Default)]
pub struct SlotAllocator {
    next: usize,
}

impl SlotAllocator {
    pub fn take(&mut self, n: usize) -> usize {
        let base = self.next;
        self.next += n;
        base
    }

    pub fn count(&self) -> usize {
        self.next
    }
}

/// Angle-embedded model: the classification configuration.
pub fn build_model(scheme: SchemeKind, qubits_per_qpu: usize, sublayers: usize, pooling: PoolingKind) -> Result<ModelSpec> {
    build_model_with(&ModelConfig::new(scheme, qubits_per_qpu, sublayers).with_pooling(pooling))
}

pub fn build_model_with(cfg: &ModelConfig) -> Result<ModelSpec> {
    let m = cfg.qubits_per_qpu;
    if m != 2 && m != 4 {
        return Err(Error::Unsupported(format!("{m} qubits per QPU (supported: 2, 4)")));
    }
    if cfg.sublayers == 0 {
        return Err(Error::Unsupported("at least one convolutional sub-layer is required".into()));
    }
    if cfg.pooling == PoolingKind::Dumb && cfg.scheme == SchemeKind::ClassicalComm {
        return Err(Error::Unsupported("dumb pooling is only defined without cross-QPU feedforward".into()));
    }
    let n_qpus = cfg.scheme.n_qpus();
    let qpus: Vec<QpuRange> = (0..n_qpus).map(|q| QpuRange { start: q * m, end: (q + 1) * m }).collect();
    let mut active: Vec<Vec<usize>> = qpus.iter().map(|r| (r.start..r.end).collect()).collect();
    let mut slots = SlotAllocator::default();
    let mut layers = Vec::new();
    let mut schedule = Vec::new();

    let embedding_ops = match cfg.embedding {
        EmbeddingMode::Angle => embedding_gates(cfg.scheme, m).into_iter().map(Op::Gate).collect(),
        EmbeddingMode::Haar => Vec::new(),
    };
    layers.push(LayerSpec { kind: LayerKind::Embedding, alignment: None, ops: embedding_ops });

    while active[0].len() > 1 {
        for l in 0..cfg.sublayers {
            let alignment = if l % 2 == 0 { Alignment::Aligned } else { Alignment::Offset };
            let gates = conv_sublayer(&active, alignment, cfg.scheme, &mut slots);
            layers.push(LayerSpec {
                kind: LayerKind::ConvSubLayer,
                alignment: Some(alignment),
                ops: gates.into_iter().map(Op::Gate).collect(),
            });
        }
        let out = match cfg.pooling {
            PoolingKind::Standard => pooling_layer(&active, cfg.scheme, &mut slots)?,
            PoolingKind::Dumb => dumb_pooling_layer(&active, &mut slots),
        };
        let layer_index = layers.len();
        schedule.extend(out.measured.iter().map(|&qubit| MeasurementEvent { qubit, layer: layer_index }));
        let kind = match cfg.pooling {
            PoolingKind::Standard => LayerKind::Pooling,
            PoolingKind::Dumb => LayerKind::DumbPooling,
        };
        layers.push(LayerSpec { kind, alignment: None, ops: out.ops });
        active = out.survivors;
    }

    let model = ModelSpec {
        scheme: cfg.scheme,
        pooling: cfg.pooling,
        embedding: cfg.embedding,
        qubits_per_qpu: m,
        sublayers: cfg.sublayers,
        qpus,
        layers,
        param_slots: slots.count(),
        measurement_schedule: schedule,
        readout_qubits: active.iter().map(|g| g[0]).collect(),
    };
    model.check_invariants()?;
    Ok(model)
}

/// Symbolic embedding: per block, Hadamard on every qubit then
/// RotY(attribute) per qubit. DQML schemes use one block per QPU; the
/// non-distributed scheme stacks two blocks on its single QPU.
pub fn embedding_gates(scheme: SchemeKind, qubits_per_qpu: usize) -> Vec<GateOp> {
    let m = qubits_per_qpu;
    let mut gates = Vec::with_capacity(4 * m);
    for block in 0..2 {
        let offset = if scheme == SchemeKind::NonDistributed { 0 } else { block * m };
        gates.extend((0..m).map(|i| GateOp::h(offset + i)));
        gates.extend((0..m).map(|i| GateOp::ry(offset + i, AngleRef::Attribute(block * m + i))));
    }
    gates
}

/// Embedding bound to concrete attributes (angles become fixed).
pub fn embedding_layer(scheme: SchemeKind, qubits_per_qpu: usize, attributes: &[f64]) -> Result<Vec<GateOp>> {
    if attributes.len() != 2 * qubits_per_qpu {
        return Err(Error::DimensionMismatch { expected: 2 * qubits_per_qpu, got: attributes.len() });
    }
    Ok(embedding_gates(scheme, qubits_per_qpu)
        .into_iter()
        .map(|mut g| {
            if let Some(AngleRef::Attribute(i)) = g.angle {
                g.angle = Some(AngleRef::Fixed(attributes[i]));
            }
            g
        })
        .collect())
}

/// Brick-wall pairing for one sub-layer. Aligned rows pair neighbours inside
/// each QPU; offset rows shift by one and wrap inside each QPU, except under
/// quantum communication where the wrap runs over the concatenated register.
pub fn brick_pairs(active: &[Vec<usize>], alignment: Alignment, scheme: SchemeKind) -> Vec<(usize, usize)> {
    fn row(g: &[usize], alignment: Alignment) -> Vec<(usize, usize)> {
        let n = g.len();
        if n < 2 {
            return Vec::new();
        }
        if n == 2 {
            return vec![(g[0], g[1])];
        }
        match alignment {
            Alignment::Aligned => g.chunks_exact(2).map(|p| (p[0], p[1])).collect(),
            Alignment::Offset => (0..n / 2).map(|k| (g[2 * k + 1], g[(2 * k + 2) % n])).collect(),
        }
    }
    match (scheme, alignment) {
        (SchemeKind::QuantumComm, Alignment::Offset) => {
            let flat: Vec<usize> = active.iter().flatten().copied().collect();
            row(&flat, alignment)
        }
        _ => active.iter().flat_map(|g| row(g, alignment)).collect(),
    }
}

/// One convolutional sub-layer. Each active qubit owns one slot, assigned by
/// its position in the active register; a pair (a, b) is
/// RotY(theta_a) (x) RotY(theta_b) followed by CZ(a, b).
pub fn conv_sublayer(active: &[Vec<usize>], alignment: Alignment, scheme: SchemeKind, slots: &mut SlotAllocator) -> Vec<GateOp> {
    let flat: Vec<usize> = active.iter().flatten().copied().collect();
    let base = slots.take(flat.len());
    let slot_of = |q: usize| base + flat.iter().position(|&x| x == q).expect("paired qubit is active");
    let mut gates = Vec::new();
    for (a, b) in brick_pairs(active, alignment, scheme) {
        gates.push(GateOp::ry(a, AngleRef::Param(slot_of(a))));
        gates.push(GateOp::ry(b, AngleRef::Param(slot_of(b))));
        gates.push(GateOp::cz(a, b));
    }
    gates
}

#[derive(Clone, Debug)]
pub struct PoolingOutput {
    pub ops: Vec<Op>,
    pub measured: Vec<usize>,
    pub survivors: Vec<Vec<usize>>,
}

fn feedforward(source: usize, target: usize, slots: &mut SlotAllocator, pairs_per_outcome: usize) -> Vec<Op> {
    let base = slots.take(4 * pairs_per_outcome);
    let mut ops = Vec::with_capacity(4 * pairs_per_outcome);
    for outcome in 0..2u8 {
        for p in 0..pairs_per_outcome {
            let s = base + 2 * (outcome as usize * pairs_per_outcome + p);
            ops.push(Op::Conditional { source, outcome, gate: GateOp::rz(target, AngleRef::Param(s)) });
            ops.push(Op::Conditional { source, outcome, gate: GateOp::rx(target, AngleRef::Param(s + 1)) });
        }
    }
    ops
}

/// Standard pooling: each block measures the lower qubit of a pair and, per
/// outcome, applies RotZ then RotX to the upper one (4 slots). Under
/// classical communication every block also drives the survivor of the
/// same-position block in the other QPU (4 more slots), in both directions.
pub fn pooling_layer(active: &[Vec<usize>], scheme: SchemeKind, slots: &mut SlotAllocator) -> Result<PoolingOutput> {
    if let Some(g) = active.iter().find(|g| g.len() % 2 != 0) {
        return Err(Error::InvalidArgument(format!("pooling needs an even active count per QPU, got {}", g.len())));
    }
    let blocks: Vec<Vec<(usize, usize)>> =
        active.iter().map(|g| g.chunks_exact(2).map(|p| (p[0], p[1])).collect()).collect();
    let mut ops = Vec::new();
    let mut measured = Vec::new();
    for qpu in &blocks {
        for &(a, b) in qpu {
            ops.push(Op::Measure { qubit: a });
            measured.push(a);
            ops.extend(feedforward(a, b, slots, 1));
        }
    }
    if scheme == SchemeKind::ClassicalComm {
        for (q, qpu) in blocks.iter().enumerate() {
            let other = &blocks[(q + 1) % blocks.len()];
            for (k, &(a, _)) in qpu.iter().enumerate() {
                ops.extend(feedforward(a, other[k].1, slots, 1));
            }
        }
    }
    let survivors = blocks.iter().map(|qpu| qpu.iter().map(|&(_, b)| b).collect()).collect();
    Ok(PoolingOutput { ops, measured, survivors })
}

/// Measures all but the last active qubit of each QPU; every measured qubit
/// drives three RotZ/RotX pairs per outcome on the survivor (12 slots).
fn dumb_pooling_layer(active: &[Vec<usize>], slots: &mut SlotAllocator) -> PoolingOutput {
    let mut ops = Vec::new();
    let mut measured = Vec::new();
    for g in active {
        let survivor = *g.last().expect("non-empty QPU");
        for &q in &g[..g.len() - 1] {
            ops.push(Op::Measure { qubit: q });
            measured.push(q);
            ops.extend(feedforward(q, survivor, slots, 3));
        }
    }
    PoolingOutput { ops, measured, survivors: active.iter().map(|g| vec![*g.last().unwrap()]).collect() }
}

/// Lifts parameters of `from` onto `into`, whose op sequence must contain the
/// ops of `from` in order (up to slot numbering). Slots of the extra ops are
/// zero, so rotations among them act as the identity.
pub fn embed_params(from: &ModelSpec, into: &ModelSpec, params: &[f64]) -> Result<ParamVector> {
    if params.len() != from.param_slots {
        return Err(Error::DimensionMismatch { expected: from.param_slots, got: params.len() });
    }
    let mut out = ParamVector::zeros(into.param_slots);
    let mut src = from.ops().peekable();
    for op in into.ops() {
        if let Some(next) = src.peek() {
            if same_shape(next, op) {
                if let (Some(a), Some(b)) = (next.gate().and_then(GateOp::param_slot), op.gate().and_then(GateOp::param_slot)) {
                    out[b] = params[a];
                }
                src.next();
                continue;
            }
        }
        if !matches!(op.gate().and_then(|g| g.angle), Some(AngleRef::Param(_))) {
            return Err(Error::InvalidModel(format!("op {op:?} of the target model has no counterpart")));
        }
    }
    if src.next().is_some() {
        return Err(Error::InvalidModel("source model is not contained in the target model".into()));
    }
    Ok(out)
}

fn same_shape(a: &Op, b: &Op) -> bool {
    let gate_shape = |x: &GateOp, y: &GateOp| {
        x.kind == y.kind
            && x.targets == y.targets
            && x.controls == y.controls
            && match (x.angle, y.angle) {
                (Some(AngleRef::Param(_)), Some(AngleRef::Param(_))) => true,
                (p, q) => p == q,
            }
    };
    match (a, b) {
        (Op::Gate(x), Op::Gate(y)) => gate_shape(x, y),
        (Op::Measure { qubit: x }, Op::Measure { qubit: y }) => x == y,
        (Op::Conditional { source: s1, outcome: o1, gate: x }, Op::Conditional { source: s2, outcome: o2, gate: y }) => {
            s1 == s2 && o1 == o2 && gate_shape(x, y)
        }
        _ => false,
    }
}
