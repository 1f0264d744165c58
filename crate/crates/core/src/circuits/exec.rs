use serde::{Deserialize, Serialize};

use super::{to_deferred, EmbeddingMode, ModelSpec, Op, Program};
use crate::error::{Error, Result};
use crate::qstate::{self, branch_measure, control_mask, measure_probabilities, Angles, Distribution, StateVector};

/// One data instance fed to a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Instance {
    /// Classical attributes for the angle embedding.
    Attributes(Vec<f64>),
    /// One input state per QPU (capacity runs).
    Haar(Vec<StateVector>),
}

impl Instance {
    pub fn attributes(&self) -> &[f64] {
        match self {
            Instance::Attributes(a) => a,
            Instance::Haar(_) => &[],
        }
    }
}

/// Register state before the first layer: `|0...0>` for angle embedding, the
/// product of per-QPU input states (QPU 0 on the low qubits) otherwise.
pub fn initial_state(model: &ModelSpec, instance: &Instance) -> Result<StateVector> {
    match (model.embedding, instance) {
        (EmbeddingMode::Angle, Instance::Attributes(a)) => {
            if a.len() != model.n_attributes() {
                return Err(Error::DimensionMismatch { expected: model.n_attributes(), got: a.len() });
            }
            StateVector::zero(model.n_qubits())
        }
        (EmbeddingMode::Haar, Instance::Haar(states)) => {
            if states.len() != model.qpus.len() {
                return Err(Error::DimensionMismatch { expected: model.qpus.len(), got: states.len() });
            }
            let mut full: Option<StateVector> = None;
            for (range, s) in model.qpus.iter().zip(states) {
                if s.n_qubits() != range.len() {
                    return Err(Error::DimensionMismatch { expected: range.len(), got: s.n_qubits() });
                }
                full = Some(match full {
                    None => s.clone(),
                    Some(low) => low.tensor(s)?,
                });
            }
            full.ok_or(Error::Empty("QPU list"))
        }
        (EmbeddingMode::Angle, Instance::Haar(_)) => {
            Err(Error::InvalidArgument("Haar instance given to an angle-embedded model".into()))
        }
        (EmbeddingMode::Haar, Instance::Attributes(_)) => {
            Err(Error::InvalidArgument("attribute instance given to a capacity (Haar) model".into()))
        }
    }
}

#[derive(Clone, Debug)]
pub struct BranchingRun {
    pub distribution: Distribution,
    /// Completed branch paths that survived pruning.
    pub leaves: usize,
}

struct Path {
    state: StateVector,
    /// Logical qubit -> position in `state`; `None` once measured.
    position: Vec<Option<usize>>,
    bits: Vec<Option<u8>>,
    probability: f64,
}

/// Executes the model with explicit mid-circuit measurements, splitting the
/// register at every measurement and enumerating all outcome paths.
pub fn forward_branching(model: &ModelSpec, params: &[f64], instance: &Instance) -> Result<BranchingRun> {
    check_params(model, params)?;
    let n = model.n_qubits();
    let angles = Angles::new(params, instance.attributes());
    let mut paths = vec![Path {
        state: initial_state(model, instance)?,
        position: (0..n).map(Some).collect(),
        bits: vec![None; n],
        probability: 1.0,
    }];
    for op in model.ops() {
        match op {
            Op::Gate(g) => {
                for p in &mut paths {
                    apply_on_path(p, g, &angles)?;
                }
            }
            Op::Conditional { source, outcome, gate } => {
                for p in &mut paths {
                    match p.bits[*source] {
                        Some(bit) if bit == *outcome => apply_on_path(p, gate, &angles)?,
                        Some(_) => {}
                        None => return Err(Error::InvalidModel(format!("conditional on unmeasured qubit {source}"))),
                    }
                }
            }
            Op::Measure { qubit } => {
                let mut next = Vec::with_capacity(paths.len() * 2);
                for p in paths {
                    let pos = p.position[*qubit].ok_or_else(|| Error::InvalidModel(format!("qubit {qubit} measured twice")))?;
                    for branch in branch_measure(&p.state, pos)? {
                        let Some(state) = branch.post_state else { continue };
                        let mut position = p.position.clone();
                        position[*qubit] = None;
                        for slot in position.iter_mut().flatten() {
                            if *slot > pos {
                                *slot -= 1;
                            }
                        }
                        let mut bits = p.bits.clone();
                        bits[*qubit] = Some(branch.outcome);
                        next.push(Path { state, position, bits, probability: p.probability * branch.probability });
                    }
                }
                paths = next;
            }
        }
    }
    let r = model.readout_qubits.len();
    let mut probs = vec![0.0; 1 << r];
    for p in &paths {
        // first readout qubit is the most significant outcome bit
        let positions: Vec<usize> = model
            .readout_qubits
            .iter()
            .rev()
            .map(|&q| p.position[q].ok_or_else(|| Error::InvalidModel(format!("readout qubit {q} was measured"))))
            .collect::<Result<_>>()?;
        let local = measure_probabilities(&p.state, &positions)?;
        for (acc, v) in probs.iter_mut().zip(local.probs()) {
            *acc += p.probability * v;
        }
    }
    Ok(BranchingRun { distribution: Distribution::new(r, probs)?, leaves: paths.len() })
}

fn apply_on_path(p: &mut Path, gate: &qstate::GateOp, angles: &Angles<'_>) -> Result<()> {
    let map = |q: usize| p.position[q].ok_or_else(|| Error::InvalidModel(format!("qubit {q} used after measurement")));
    let targets: Vec<usize> = gate.targets.iter().map(|&q| map(q)).collect::<Result<_>>()?;
    for c in &gate.controls {
        map(c.qubit)?;
    }
    let (cmask, cval) = control_mask(&gate.controls, |q| p.position[q].expect("checked above"));
    let angle = gate.angle.map(|a| angles.resolve(a)).transpose()?;
    qstate::apply_mapped(p.state.amplitudes_mut(), gate.kind, &targets, cmask, cval, angle, gate.matrix.as_ref());
    Ok(())
}

fn check_params(model: &ModelSpec, params: &[f64]) -> Result<()> {
    if params.len() != model.param_slots {
        return Err(Error::DimensionMismatch { expected: model.param_slots, got: params.len() });
    }
    Ok(())
}

/// Readout distribution of the measurement-free equivalent program.
pub fn forward_deferred(model: &ModelSpec, params: &[f64], instance: &Instance) -> Result<Distribution> {
    let deferred = if model.is_deferred() { model.clone() } else { to_deferred(model) };
    Program::compile(&deferred)?.forward(params, instance)
}

/// Readout distribution over outcome bitstrings (first QPU's bit most
/// significant). Models with mid-circuit measurements run by branch
/// enumeration; measurement-free models run on the compiled program.
pub fn forward(model: &ModelSpec, params: &[f64], instance: &Instance) -> Result<Distribution> {
    if model.has_mid_circuit_measurement() {
        Ok(forward_branching(model, params, instance)?.distribution)
    } else {
        check_params(model, params)?;
        Program::compile(model)?.forward(params, instance)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::circuits::{build_model, build_model_with, embed_params, embedding_layer, ModelConfig, PoolingKind, QpuRange, SchemeKind};
    use crate::qstate::{haar_state, AngleRef, Control, GateOp};
    use crate::testutil::{dense_forward, random_attributes, random_params};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn random_instance(model: &ModelSpec, r: &mut ChaCha8Rng) -> Instance {
        match model.embedding {
            EmbeddingMode::Angle => Instance::Attributes(random_attributes(model.n_attributes(), r)),
            EmbeddingMode::Haar => Instance::Haar(model.qpus.iter().map(|q| haar_state(q.len(), r).unwrap()).collect()),
        }
    }

    #[test]
    fn zero_attributes_give_uniform_register() {
        let mut s = StateVector::zero(8).unwrap();
        for g in embedding_layer(SchemeKind::NoComm, 4, &[0.0; 8]).unwrap() {
            s.apply_with(&g, &Angles::default()).unwrap();
        }
        let all: Vec<usize> = (0..8).collect();
        let d = measure_probabilities(&s, &all).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1.0 / 256.0).abs() < 1e-14));
    }

    #[test]
    fn half_pi_attribute_flips_first_qubit() {
        // RY(pi/2) H |0> by explicit 2x2 products
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let h0 = [r, r];
        let (s, c) = (std::f64::consts::FRAC_PI_4.sin(), std::f64::consts::FRAC_PI_4.cos());
        let out = [c * h0[0] - s * h0[1], s * h0[0] + c * h0[1]];
        let expected = out[1] * out[1];
        let mut attrs = [0.0; 8];
        attrs[0] = std::f64::consts::FRAC_PI_2;
        let mut st = StateVector::zero(8).unwrap();
        for g in embedding_layer(SchemeKind::NoComm, 4, &attrs).unwrap() {
            st.apply_with(&g, &Angles::default()).unwrap();
        }
        let p = measure_probabilities(&st, &[0]).unwrap();
        assert!((p.get(1) - expected).abs() < 1e-12);
        assert!((expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let mut r = rng(11);
        for scheme in SchemeKind::ALL {
            for (m, l) in [(2, 1), (2, 3), (4, 1), (4, 2)] {
                let model = build_model(scheme, m, l, PoolingKind::Standard).unwrap();
                let params = random_params(model.param_slots, &mut r);
                let inst = random_instance(&model, &mut r);
                let got = forward(&model, &params, &inst).unwrap();
                let want = dense_forward(&to_deferred(&model), &params, &inst);
                assert!(max_diff(got.probs(), &want) < 1e-10, "{scheme} m={m} l={l}");
                assert!((got.total() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deferred_program_matches_branching() {
        let mut r = rng(12);
        for scheme in SchemeKind::ALL {
            for l in 1..=4 {
                for embedding in [EmbeddingMode::Angle, EmbeddingMode::Haar] {
                    for pooling in [PoolingKind::Standard, PoolingKind::Dumb] {
                        let cfg = ModelConfig::new(scheme, 4, l).with_pooling(pooling).with_embedding(embedding);
                        let Ok(model) = build_model_with(&cfg) else {
                            assert_eq!((scheme, pooling), (SchemeKind::ClassicalComm, PoolingKind::Dumb));
                            continue;
                        };
                        let params = random_params(model.param_slots, &mut r);
                        let inst = random_instance(&model, &mut r);
                        let a = forward_branching(&model, &params, &inst).unwrap();
                        let b = forward_deferred(&model, &params, &inst).unwrap();
                        assert!(a.distribution.max_abs_diff(&b) < 1e-12, "{scheme} l={l}");
                    }
                }
            }
        }
    }

    #[test]
    fn branch_count_for_classical_comm() {
        let model = build_model(SchemeKind::ClassicalComm, 4, 1, PoolingKind::Standard).unwrap();
        let mut r = rng(13);
        let params = random_params(model.param_slots, &mut r);
        let run = forward_branching(&model, &params, &random_instance(&model, &mut r)).unwrap();
        assert_eq!(run.leaves, 64);
    }

    #[test]
    fn components_factorize() {
        let cases = [
            (SchemeKind::NonDistributed, 1),
            (SchemeKind::NoComm, 2),
            (SchemeKind::ClassicalComm, 1),
            (SchemeKind::QuantumComm, 1),
        ];
        for (scheme, n) in cases {
            let model = to_deferred(&build_model(scheme, 4, 2, PoolingKind::Standard).unwrap());
            assert_eq!(Program::compile(&model).unwrap().n_components(), n, "{scheme}");
        }
        let model = build_model(SchemeKind::NoComm, 4, 3, PoolingKind::Standard).unwrap();
        let mut r = rng(14);
        let p = forward(&model, &random_params(model.param_slots, &mut r), &random_instance(&model, &mut r)).unwrap();
        let pa = [p.get(0) + p.get(1), p.get(2) + p.get(3)];
        let pb = [p.get(0) + p.get(2), p.get(1) + p.get(3)];
        for y in 0..4 {
            assert!((p.get(y) - pa[y >> 1] * pb[y & 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn classical_comm_without_links_equals_no_comm() {
        let mut r = rng(15);
        for (m, l) in [(2, 2), (4, 1), (4, 3)] {
            let nc = build_model(SchemeKind::NoComm, m, l, PoolingKind::Standard).unwrap();
            let cc = build_model(SchemeKind::ClassicalComm, m, l, PoolingKind::Standard).unwrap();
            let params = random_params(nc.param_slots, &mut r);
            let lifted = embed_params(&nc, &cc, &params).unwrap();
            let inst = random_instance(&nc, &mut r);
            let a = forward(&nc, &params, &inst).unwrap();
            let b = forward(&cc, &lifted, &inst).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn control_on_zero_is_conjugated_control_on_one() {
        let mut r = rng(16);
        let s0 = haar_state(3, &mut r).unwrap();
        let theta = 0.83;
        let on_zero = GateOp::rx(2, AngleRef::Fixed(theta)).with_control(Control::on_zero(0));
        let on_one = GateOp::rx(2, AngleRef::Fixed(theta)).with_control(Control::on_one(0));
        let mut a = s0.clone();
        a.apply_with(&on_zero, &Angles::default()).unwrap();
        let mut b = s0;
        let x = GateOp::rx(0, AngleRef::Fixed(std::f64::consts::PI));
        b.apply_with(&x, &Angles::default()).unwrap();
        b.apply_with(&on_one, &Angles::default()).unwrap();
        let x_back = GateOp::rx(0, AngleRef::Fixed(-std::f64::consts::PI));
        b.apply_with(&x_back, &Angles::default()).unwrap();
        let diff = a.amplitudes().iter().zip(b.amplitudes()).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn identical_halves_give_symmetric_output() {
        let model = build_model(SchemeKind::NoComm, 4, 3, PoolingKind::Standard).unwrap();
        let mut r = rng(17);
        let half_params = model.param_slots / 2;
        let block = random_params(half_params, &mut r);
        // slots of QPU 1 mirror those of QPU 0 in layer order
        let mut params = vec![0.0; model.param_slots];
        let mut counters = [0usize; 2];
        for op in model.ops() {
            if let Some(slot) = op.gate().and_then(GateOp::param_slot) {
                let q = model.qpu_of(op.gate().unwrap().targets[0]).unwrap();
                params[slot] = block[counters[q]];
                counters[q] += 1;
            }
        }
        assert_eq!(counters, [half_params, half_params]);
        let half = random_attributes(4, &mut r);
        let attrs: Vec<f64> = half.iter().chain(&half).copied().collect();
        let p = forward(&model, &params, &Instance::Attributes(attrs)).unwrap();
        assert!((p.get(1) - p.get(2)).abs() < 1e-12);
        let pa = p.get(2) + p.get(3);
        assert!((p.get(3) - pa * pa).abs() < 1e-12);
    }

    #[test]
    fn zero_angles_read_the_marginal() {
        let model = build_model(SchemeKind::ClassicalComm, 4, 2, PoolingKind::Standard).unwrap();
        let mut r = rng(18);
        let attrs = random_attributes(8, &mut r);
        let params = vec![0.0; model.param_slots];
        let p = forward(&model, &params, &Instance::Attributes(attrs.clone())).unwrap();
        let mut s = StateVector::zero(8).unwrap();
        let angles = Angles::new(&params, &attrs);
        for g in model.ops().filter_map(|op| match op {
            Op::Gate(g) => Some(g),
            _ => None,
        }) {
            s.apply_with(g, &angles).unwrap();
        }
        let q = measure_probabilities(&s, &[7, 3]).unwrap();
        assert!(p.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn classical_link_correlates_outputs() {
        let pi = std::f64::consts::PI;
        let ops = vec![
            Op::Gate(GateOp::h(0)),
            Op::Measure { qubit: 0 },
            Op::Conditional { source: 0, outcome: 1, gate: GateOp::rx(1, AngleRef::Fixed(pi)) },
            Op::Conditional { source: 0, outcome: 1, gate: GateOp::rx(3, AngleRef::Fixed(pi)) },
        ];
        let qpus = vec![QpuRange { start: 0, end: 2 }, QpuRange { start: 2, end: 4 }];
        let model = ModelSpec::custom(SchemeKind::ClassicalComm, EmbeddingMode::Angle, qpus, ops, 0, vec![1, 3]).unwrap();
        let p = forward(&model, &[], &Instance::Attributes(vec![])).unwrap();
        assert!((p.get(0) - 0.5).abs() < 1e-12 && (p.get(3) - 0.5).abs() < 1e-12);
        assert!(p.get(1).abs() < 1e-12 && p.get(2).abs() < 1e-12);
        let d = forward_deferred(&model, &[], &Instance::Attributes(vec![])).unwrap();
        assert!(p.max_abs_diff(&d) < 1e-12);
    }

    #[test]
    fn rejects_wrong_inputs() {
        let model = build_model(SchemeKind::NoComm, 2, 1, PoolingKind::Standard).unwrap();
        let inst = Instance::Attributes(vec![0.0; 4]);
        assert!(matches!(forward(&model, &[0.0; 3], &inst), Err(Error::DimensionMismatch { .. })));
        let params = vec![0.0; model.param_slots];
        assert!(forward(&model, &params, &Instance::Attributes(vec![0.0; 3])).is_err());
        assert!(forward(&model, &params, &Instance::Haar(vec![])).is_err());
        assert!(matches!(Program::compile(&model), Err(Error::NotDeferred)));
    }
}
