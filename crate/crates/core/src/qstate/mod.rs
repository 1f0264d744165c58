//! Dense statevector engine.
//!
//! Qubit 0 is the least significant bit of a basis index. Outcome bitstrings
//! are printed most-significant bit first.

mod haar;
pub(crate) mod kernels;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Deref, DerefMut};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use kernels::Pauli;

pub use haar::{haar_state, haar_unitary, MAX_HAAR_QUBITS};

pub const MAX_QUBITS: usize = 10;

/// Branches with probability below this are dropped from enumeration.
pub const PRUNE_PROBABILITY: f64 = 1e-14;

/// Trainable angles.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }
}

impl Deref for ParamVector {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitaryMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl UnitaryMatrix {
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: data.len() });
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C64::new(1.0, 0.0);
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                data[c * n + r] = self.data[r * n + c].conj();
            }
        }
        Self { dim: n, data }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        let n = self.dim;
        assert_eq!(n, rhs.dim, "matrix dimensions differ");
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                for c in 0..n {
                    data[r * n + c] += a * rhs.data[k * n + c];
                }
            }
        }
        Self { dim: n, data }
    }

    /// Largest entry-wise deviation of `U^dagger U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.adjoint().matmul(self);
        let mut err: f64 = 0.0;
        for r in 0..self.dim {
            for c in 0..self.dim {
                let target = if r == c { 1.0 } else { 0.0 };
                err = err.max((p.get(r, c) - target).norm());
            }
        }
        err
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    PauliRotX,
    PauliRotY,
    PauliRotZ,
    Hadamard,
    CZ,
    /// targets = [control, target]
    CNOT,
    ArbitraryUnitary,
}

impl GateKind {
    pub fn is_rotation(self) -> bool {
        matches!(self, Self::PauliRotX | Self::PauliRotY | Self::PauliRotZ)
    }

    fn arity(self) -> Option<usize> {
        match self {
            Self::PauliRotX | Self::PauliRotY | Self::PauliRotZ | Self::Hadamard => Some(1),
            Self::CZ | Self::CNOT => Some(2),
            Self::ArbitraryUnitary => None,
        }
    }

    pub(crate) fn generator(self) -> Option<Pauli> {
        match self {
            Self::PauliRotX => Some(Pauli::X),
            Self::PauliRotY => Some(Pauli::Y),
            Self::PauliRotZ => Some(Pauli::Z),
            _ => None,
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A control qubit; the gate fires when the qubit is in `|state>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Control {
    pub qubit: usize,
    pub state: bool,
}

impl Control {
    pub fn on_one(qubit: usize) -> Self {
        Self { qubit, state: true }
    }

    pub fn on_zero(qubit: usize) -> Self {
        Self { qubit, state: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AngleRef {
    /// Trainable parameter slot.
    Param(usize),
    /// Data attribute of the evaluated instance.
    Attribute(usize),
    Fixed(f64),
}

/// Resolves [`AngleRef`]s against a parameter vector and instance attributes.
#[derive(Clone, Copy, Debug, Default)]
pub struct Angles<'a> {
    pub params: &'a [f64],
    pub attributes: &'a [f64],
}

impl<'a> Angles<'a> {
    pub fn new(params: &'a [f64], attributes: &'a [f64]) -> Self {
        Self { params, attributes }
    }

    pub fn resolve(&self, angle: AngleRef) -> Result<f64> {
        match angle {
            AngleRef::Param(slot) => self
                .params
                .get(slot)
                .copied()
                .ok_or(Error::MissingParameter { slot, len: self.params.len() }),
            AngleRef::Attribute(index) => self
                .attributes
                .get(index)
                .copied()
                .ok_or(Error::MissingAttribute { index, len: self.attributes.len() }),
            AngleRef::Fixed(v) => Ok(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<Control>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<AngleRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<UnitaryMatrix>,
}

impl GateOp {
    fn rotation(kind: GateKind, qubit: usize, angle: AngleRef) -> Self {
        Self { kind, targets: vec![qubit], controls: Vec::new(), angle: Some(angle), matrix: None }
    }

    pub fn rx(qubit: usize, angle: AngleRef) -> Self {
        Self::rotation(GateKind::PauliRotX, qubit, angle)
    }

    pub fn ry(qubit: usize, angle: AngleRef) -> Self {
        Self::rotation(GateKind::PauliRotY, qubit, angle)
    }

    pub fn rz(qubit: usize, angle: AngleRef) -> Self {
        Self::rotation(GateKind::PauliRotZ, qubit, angle)
    }

    pub fn h(qubit: usize) -> Self {
        Self { kind: GateKind::Hadamard, targets: vec![qubit], controls: Vec::new(), angle: None, matrix: None }
    }

    pub fn cz(a: usize, b: usize) -> Self {
        Self { kind: GateKind::CZ, targets: vec![a, b], controls: Vec::new(), angle: None, matrix: None }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self { kind: GateKind::CNOT, targets: vec![control, target], controls: Vec::new(), angle: None, matrix: None }
    }

    pub fn unitary(targets: Vec<usize>, matrix: UnitaryMatrix) -> Self {
        Self { kind: GateKind::ArbitraryUnitary, targets, controls: Vec::new(), angle: None, matrix: Some(matrix) }
    }

    pub fn with_control(mut self, control: Control) -> Self {
        self.controls.push(control);
        self
    }

    pub fn param_slot(&self) -> Option<usize> {
        match self.angle {
            Some(AngleRef::Param(s)) => Some(s),
            _ => None,
        }
    }

    /// All qubits touched (targets then controls).
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.targets.iter().copied().chain(self.controls.iter().map(|c| c.qubit))
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if let Some(arity) = self.kind.arity() {
            if self.targets.len() != arity {
                return Err(Error::InvalidGate(format!(
                    "{} expects {arity} target(s), got {}",
                    self.kind,
                    self.targets.len()
                )));
            }
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidGate("no targets".into()));
        }
        if self.angle.is_some() && self.matrix.is_some() {
            return Err(Error::InvalidGate("gate carries both an angle and a fixed matrix".into()));
        }
        if self.kind.is_rotation() && self.angle.is_none() {
            return Err(Error::InvalidGate(format!("{} requires an angle", self.kind)));
        }
        if self.kind == GateKind::ArbitraryUnitary {
            let m = self.matrix.as_ref().ok_or_else(|| Error::InvalidGate("unitary without matrix".into()))?;
            if m.dim() != 1 << self.targets.len() {
                return Err(Error::DimensionMismatch { expected: 1 << self.targets.len(), got: m.dim() });
            }
        }
        let mut seen = 0usize;
        for q in self.support() {
            if q >= n_qubits {
                return Err(Error::QubitOutOfRange { index: q, n_qubits });
            }
            if seen >> q & 1 == 1 {
                return Err(Error::OverlappingQubits(q));
            }
            seen |= 1 << q;
        }
        Ok(())
    }

    pub(crate) fn control_mask(&self) -> (usize, usize) {
        control_mask(&self.controls, |q| q)
    }
}

pub(crate) fn control_mask(controls: &[Control], map: impl Fn(usize) -> usize) -> (usize, usize) {
    controls.iter().fold((0, 0), |(m, v), c| {
        let bit = 1usize << map(c.qubit);
        (m | bit, if c.state { v | bit } else { v })
    })
}

/// Applies a validated gate in place, with targets/controls already mapped to
/// positions of `amps`.
pub(crate) fn apply_mapped(
    amps: &mut [C64],
    kind: GateKind,
    targets: &[usize],
    cmask: usize,
    cval: usize,
    angle: Option<f64>,
    matrix: Option<&UnitaryMatrix>,
) {
    let theta = angle.unwrap_or(0.0);
    match kind {
        GateKind::PauliRotX => kernels::apply_rx(amps, targets[0], cmask, cval, theta),
        GateKind::PauliRotY => kernels::apply_ry(amps, targets[0], cmask, cval, theta),
        GateKind::PauliRotZ => kernels::apply_rz(amps, targets[0], cmask, cval, theta),
        GateKind::Hadamard => kernels::apply_h(amps, targets[0], cmask, cval),
        GateKind::CZ => kernels::apply_cz(amps, targets[0], targets[1], cmask, cval),
        GateKind::CNOT => {
            let cbit = 1 << targets[0];
            kernels::apply_x(amps, targets[1], cmask | cbit, cval | cbit)
        }
        GateKind::ArbitraryUnitary => {
            kernels::apply_unitary(amps, targets, cmask, cval, matrix.expect("validated unitary"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<C64>,
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_width(n_qubits)?;
        let mut amplitudes = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        if index >= amplitudes.len() {
            return Err(Error::InvalidArgument(format!("basis index {index} out of range")));
        }
        amplitudes[index] = C64::new(1.0, 0.0);
        Ok(Self { n_qubits, amplitudes })
    }

    /// Wraps raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let len = amplitudes.len();
        if !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("amplitude count {len} is not a power of two")));
        }
        let n_qubits = len.trailing_zeros() as usize;
        check_width(n_qubits)?;
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `high (x) self`: `self` occupies the low qubits.
    pub fn tensor(&self, high: &StateVector) -> Result<StateVector> {
        check_width(self.n_qubits + high.n_qubits)?;
        let mut amplitudes = Vec::with_capacity(self.amplitudes.len() * high.amplitudes.len());
        for h in &high.amplitudes {
            amplitudes.extend(self.amplitudes.iter().map(|l| l * h));
        }
        Ok(Self { n_qubits: self.n_qubits + high.n_qubits, amplitudes })
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// Applies `gate` in place with an already resolved angle.
    pub fn apply_resolved(&mut self, gate: &GateOp, angle: Option<f64>) -> Result<()> {
        gate.validate(self.n_qubits)?;
        if gate.kind.is_rotation() && angle.is_none() {
            return Err(Error::InvalidGate(format!("{} applied without an angle", gate.kind)));
        }
        let (cmask, cval) = gate.control_mask();
        apply_mapped(&mut self.amplitudes, gate.kind, &gate.targets, cmask, cval, angle, gate.matrix.as_ref());
        Ok(())
    }

    pub fn apply_with(&mut self, gate: &GateOp, angles: &Angles<'_>) -> Result<()> {
        let angle = gate.angle.map(|a| angles.resolve(a)).transpose()?;
        self.apply_resolved(gate, angle)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: StateVector = serde_json::from_str(s)?;
        if state.amplitudes.len() != 1 << state.n_qubits {
            return Err(Error::DimensionMismatch { expected: 1 << state.n_qubits, got: state.amplitudes.len() });
        }
        Ok(state)
    }
}

fn check_width(n_qubits: usize) -> Result<()> {
    if n_qubits > MAX_QUBITS {
        return Err(Error::TooManyQubits { got: n_qubits, max: MAX_QUBITS });
    }
    Ok(())
}

/// Returns `gate` applied to `state`. Attribute-bound angles are not
/// resolvable here; use [`StateVector::apply_with`] for those.
pub fn apply_gate(state: &StateVector, gate: &GateOp, angles: &ParamVector) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply_with(gate, &Angles::new(angles, &[]))?;
    Ok(out)
}

/// Probability distribution over outcome bitstrings. Bit `j` of an outcome
/// index belongs to the `j`-th measured qubit; labels print the highest bit
/// first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    n_bits: usize,
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(n_bits: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 1 << n_bits {
            return Err(Error::DimensionMismatch { expected: 1 << n_bits, got: probs.len() });
        }
        Ok(Self { n_bits, probs })
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn get(&self, outcome: usize) -> f64 {
        self.probs[outcome]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn label(&self, outcome: usize) -> String {
        (0..self.n_bits).rev().map(|b| if outcome >> b & 1 == 1 { '1' } else { '0' }).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.probs.iter().enumerate().map(|(i, p)| (self.label(i), *p)).collect()
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        assert_eq!(self.probs.len(), other.probs.len(), "distribution sizes differ");
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn measure_probabilities(state: &StateVector, qubits: &[usize]) -> Result<Distribution> {
    let mut seen = 0usize;
    for &q in qubits {
        if q >= state.n_qubits {
            return Err(Error::QubitOutOfRange { index: q, n_qubits: state.n_qubits });
        }
        if seen >> q & 1 == 1 {
            return Err(Error::OverlappingQubits(q));
        }
        seen |= 1 << q;
    }
    let mut probs = vec![0.0; 1 << qubits.len()];
    for (i, a) in state.amplitudes.iter().enumerate() {
        let outcome = qubits.iter().enumerate().fold(0, |acc, (j, q)| acc | ((i >> q & 1) << j));
        probs[outcome] += a.norm_sqr();
    }
    Distribution::new(qubits.len(), probs)
}

/// One outcome of a single-qubit mid-circuit measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub qubit: usize,
    pub outcome: u8,
    pub probability: f64,
    /// Renormalized state on the remaining qubits (higher qubits shift down by
    /// one). `None` when the branch is pruned.
    pub post_state: Option<StateVector>,
}

pub fn branch_measure(state: &StateVector, qubit: usize) -> Result<[Branch; 2]> {
    if qubit >= state.n_qubits {
        return Err(Error::QubitOutOfRange { index: qubit, n_qubits: state.n_qubits });
    }
    let low = (1usize << qubit) - 1;
    let half = state.amplitudes.len() >> 1;
    let make = |outcome: u8| {
        let amps: Vec<C64> = (0..half)
            .map(|k| state.amplitudes[((k & !low) << 1) | ((outcome as usize) << qubit) | (k & low)])
            .collect();
        let probability: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let post_state = (probability >= PRUNE_PROBABILITY).then(|| {
            let scale = 1.0 / probability.sqrt();
            StateVector { n_qubits: state.n_qubits - 1, amplitudes: amps.into_iter().map(|a| a * scale).collect() }
        });
        Branch { qubit, outcome, probability, post_state }
    };
    Ok([make(0), make(1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_state(n: usize, seed: u64) -> StateVector {
        haar_state(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    use crate::testutil::{dense_gate as dense_matrix, matvec};

    fn all_gates(n: usize, seed: u64) -> Vec<GateOp> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u2 = haar_unitary(2, &mut rng).unwrap();
        let u1 = haar_unitary(1, &mut rng).unwrap();
        let mut gates = vec![
            GateOp::rx(0, AngleRef::Param(0)),
            GateOp::ry(n - 1, AngleRef::Param(0)),
            GateOp::rz(1, AngleRef::Param(0)),
            GateOp::h(2 % n),
            GateOp::cz(0, 1),
            GateOp::cnot(1, 0),
            GateOp::unitary(vec![1], u1),
            GateOp::rx(0, AngleRef::Param(0)).with_control(Control::on_one(1)),
            GateOp::ry(1, AngleRef::Param(0)).with_control(Control::on_zero(0)),
        ];
        if n >= 3 {
            gates.push(GateOp::unitary(vec![2, 0], u2));
            gates.push(GateOp::rz(2, AngleRef::Param(0)).with_control(Control::on_one(0)).with_control(Control::on_zero(1)));
            gates.push(GateOp::cz(0, 2).with_control(Control::on_one(1)));
        }
        gates
    }

    #[test]
    fn rot_y_zero_is_identity() {
        let s = random_state(3, 1);
        let out = apply_gate(&s, &GateOp::ry(1, AngleRef::Param(0)), &ParamVector(vec![0.0])).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn rot_x_pi_flips_with_phase() {
        let s = StateVector::zero(1).unwrap();
        let out = apply_gate(&s, &GateOp::rx(0, AngleRef::Param(0)), &ParamVector(vec![PI])).unwrap();
        assert!(out.amplitudes()[0].norm() < 1e-15);
        assert!((out.amplitudes()[1] - c(0.0, -1.0)).norm() < 1e-15);
        let p = measure_probabilities(&out, &[0]).unwrap();
        assert!((p.get(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cz_is_an_involution() {
        let s = random_state(2, 7);
        let m = dense_matrix(&GateOp::cz(0, 1), 2, 0.0);
        let twice: Vec<Vec<C64>> = (0..4)
            .map(|r| (0..4).map(|col| (0..4).map(|k| m[r][k] * m[k][col]).sum()).collect())
            .collect();
        for r in 0..4 {
            for col in 0..4 {
                let id = if r == col { 1.0 } else { 0.0 };
                assert!((twice[r][col] - c(id, 0.0)).norm() < 1e-12);
            }
        }
        let p = ParamVector::default();
        let out = apply_gate(&apply_gate(&s, &GateOp::cz(0, 1), &p).unwrap(), &GateOp::cz(0, 1), &p).unwrap();
        for (a, b) in out.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn kernels_match_dense_matrices() {
        for n in 2..=3 {
            for (g_idx, gate) in all_gates(n, 11).iter().enumerate() {
                let s = random_state(n, 100 + g_idx as u64);
                let theta = 0.37 + g_idx as f64;
                let out = apply_gate(&s, gate, &ParamVector(vec![theta])).unwrap();
                let expected = matvec(&dense_matrix(gate, n, theta), s.amplitudes());
                for (a, b) in out.amplitudes().iter().zip(&expected) {
                    assert!((a - b).norm() < 1e-12, "gate {gate:?} on {n} qubits");
                }
                assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn control_in_zero_state_acts_as_identity() {
        // qubit 2 is |0>, other qubits random
        let s = random_state(2, 3).tensor(&StateVector::zero(1).unwrap()).unwrap();
        for gate in all_gates(2, 5) {
            let g = gate.with_control(Control::on_one(2));
            let out = apply_gate(&s, &g, &ParamVector(vec![1.1])).unwrap();
            assert_eq!(out, s);
        }
    }

    #[test]
    fn gate_validation_errors() {
        let s = StateVector::zero(2).unwrap();
        let p = ParamVector(vec![0.1]);
        assert!(matches!(
            apply_gate(&s, &GateOp::ry(2, AngleRef::Param(0)), &p),
            Err(Error::QubitOutOfRange { index: 2, .. })
        ));
        assert!(matches!(
            apply_gate(&s, &GateOp::ry(0, AngleRef::Param(0)).with_control(Control::on_one(0)), &p),
            Err(Error::OverlappingQubits(0))
        ));
        assert!(matches!(
            apply_gate(&s, &GateOp::ry(0, AngleRef::Param(3)), &p),
            Err(Error::MissingParameter { slot: 3, len: 1 })
        ));
        let mut both = GateOp::unitary(vec![0], UnitaryMatrix::identity(2));
        both.angle = Some(AngleRef::Param(0));
        assert!(matches!(apply_gate(&s, &both, &p), Err(Error::InvalidGate(_))));
    }

    #[test]
    fn basis_and_bell_probabilities() {
        let s = StateVector::zero(2).unwrap();
        let p = measure_probabilities(&s, &[0, 1]).unwrap();
        assert_eq!(p.probs(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.to_map()["00"], 1.0);
        let r = 1.0 / 2f64.sqrt();
        let bell = StateVector::from_amplitudes(vec![c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(r, 0.0)]).unwrap();
        let p = measure_probabilities(&bell, &[0]).unwrap();
        assert!((p.get(0) - 0.5).abs() < 1e-15 && (p.get(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn marginal_matches_brute_force() {
        let s = random_state(3, 21);
        let full: Vec<f64> = s.amplitudes().iter().map(|a| a.norm_sqr()).collect();
        let mut oracle = [0.0; 4];
        for (i, p) in full.iter().enumerate() {
            let q0 = i & 1;
            let q2 = (i >> 2) & 1;
            oracle[q0 | (q2 << 1)] += p;
        }
        let p = measure_probabilities(&s, &[0, 2]).unwrap();
        for k in 0..4 {
            assert!((p.get(k) - oracle[k]).abs() < 1e-12);
        }
        assert!((p.total() - 1.0).abs() < 1e-12);
        assert_eq!(p.label(2), "10");
        assert!(matches!(measure_probabilities(&s, &[1, 1]), Err(Error::OverlappingQubits(1))));
    }

    #[test]
    fn deterministic_branch() {
        let psi = random_state(2, 5);
        // qubit 0 holds |0>, psi on qubits 1..2
        let s = StateVector::zero(1).unwrap().tensor(&psi).unwrap();
        let [b0, b1] = branch_measure(&s, 0).unwrap();
        assert!((b0.probability - 1.0).abs() < 1e-12);
        assert_eq!(b1.probability, 0.0);
        assert!(b1.post_state.is_none());
        let post = b0.post_state.unwrap();
        for (a, b) in post.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bell_split() {
        let r = 1.0 / 2f64.sqrt();
        let bell = StateVector::from_amplitudes(vec![c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(r, 0.0)]).unwrap();
        let [b0, b1] = branch_measure(&bell, 0).unwrap();
        assert!((b0.probability - 0.5).abs() < 1e-15);
        assert!((b1.probability - 0.5).abs() < 1e-15);
        assert_eq!(b0.post_state.unwrap(), StateVector::basis(1, 0).unwrap());
        let s1 = b1.post_state.unwrap();
        assert!((s1.amplitudes()[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn branches_reassemble_projected_state() {
        let s = random_state(4, 9);
        for qubit in 0..4 {
            let branches = branch_measure(&s, qubit).unwrap();
            assert!((branches[0].probability + branches[1].probability - 1.0).abs() < 1e-12);
            for b in &branches {
                let post = b.post_state.as_ref().unwrap();
                // projector oracle: (Pi_o psi)(Pi_o psi)^dagger, with the measured qubit fixed to o
                let projected: Vec<C64> = (0..16)
                    .filter(|i| (i >> qubit & 1) as u8 == b.outcome)
                    .map(|i| s.amplitudes()[i])
                    .collect();
                let rebuilt: Vec<C64> = post.amplitudes().iter().map(|a| a * b.probability.sqrt()).collect();
                for i in 0..8 {
                    for j in 0..8 {
                        let lhs = rebuilt[i] * rebuilt[j].conj();
                        let rhs = projected[i] * projected[j].conj();
                        assert!((lhs - rhs).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn json_dump_shape() {
        let s = StateVector::zero(1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(v["n_qubits"], 1);
        assert_eq!(v["amplitudes"], serde_json::json!([[1.0, 0.0], [0.0, 0.0]]));
        assert_eq!(StateVector::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn engine_cap() {
        assert!(matches!(StateVector::zero(11), Err(Error::TooManyQubits { got: 11, .. })));
        assert!(StateVector::zero(10).is_ok());
    }
}
