//! Test-only oracles that do not go through the engine's kernels.

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::circuits::{initial_state, Instance, ModelSpec, Op};
use crate::qstate::{AngleRef, GateKind, GateOp};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Dense 2^n x 2^n matrix of a gate, built column by column from explicit bit
/// manipulation.
pub(crate) fn dense_gate(gate: &GateOp, n: usize, theta: f64) -> Vec<Vec<C64>> {
    let dim = 1 << n;
    let (s, co) = (0.5 * theta).sin_cos();
    let local: [[C64; 2]; 2] = match gate.kind {
        GateKind::PauliRotX => [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]],
        GateKind::PauliRotY => [[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]],
        GateKind::PauliRotZ => [[c(co, -s), c(0.0, 0.0)], [c(0.0, 0.0), c(co, s)]],
        GateKind::Hadamard => {
            let r = 1.0 / 2f64.sqrt();
            [[c(r, 0.0), c(r, 0.0)], [c(r, 0.0), c(-r, 0.0)]]
        }
        _ => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]],
    };
    let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
    for col in 0..dim {
        let active = gate.controls.iter().all(|ct| (col >> ct.qubit & 1 == 1) == ct.state);
        if !active {
            m[col][col] = c(1.0, 0.0);
            continue;
        }
        match gate.kind {
            GateKind::CZ => {
                let both = col >> gate.targets[0] & 1 == 1 && col >> gate.targets[1] & 1 == 1;
                m[col][col] = c(if both { -1.0 } else { 1.0 }, 0.0);
            }
            GateKind::CNOT => {
                let row = if col >> gate.targets[0] & 1 == 1 { col ^ (1 << gate.targets[1]) } else { col };
                m[row][col] = c(1.0, 0.0);
            }
            GateKind::ArbitraryUnitary => {
                let mat = gate.matrix.as_ref().unwrap();
                let t = &gate.targets;
                let sub_in: usize = t.iter().enumerate().map(|(j, q)| (col >> q & 1) << j).sum();
                let base = t.iter().fold(col, |acc, q| acc & !(1 << q));
                for sub_out in 0..mat.dim() {
                    let row = t.iter().enumerate().fold(base, |acc, (j, q)| acc | ((sub_out >> j & 1) << q));
                    m[row][col] = mat.get(sub_out, sub_in);
                }
            }
            _ => {
                let t = gate.targets[0];
                let bit = col >> t & 1;
                for out in 0..2 {
                    let row = (col & !(1 << t)) | (out << t);
                    m[row][col] = local[out][bit];
                }
            }
        }
    }
    m
}

pub(crate) fn matvec(m: &[Vec<C64>], v: &[C64]) -> Vec<C64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Readout distribution of a measurement-free model by dense matrix products
/// on the full register.
pub(crate) fn dense_forward(model: &ModelSpec, params: &[f64], instance: &Instance) -> Vec<f64> {
    assert!(model.is_deferred());
    let n = model.n_qubits();
    let mut v = initial_state(model, instance).unwrap().into_amplitudes();
    for op in model.ops() {
        let Op::Gate(g) = op else { unreachable!() };
        let theta = match g.angle {
            Some(AngleRef::Param(s)) => params[s],
            Some(AngleRef::Attribute(i)) => instance.attributes()[i],
            Some(AngleRef::Fixed(x)) => x,
            None => 0.0,
        };
        v = matvec(&dense_gate(g, n, theta), &v);
    }
    let r = model.readout_qubits.len();
    let mut p = vec![0.0; 1 << r];
    for (i, a) in v.iter().enumerate() {
        let y = model.readout_qubits.iter().fold(0, |acc, &q| (acc << 1) | (i >> q & 1));
        p[y] += a.norm_sqr();
    }
    p
}

pub(crate) fn random_params<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect()
}

pub(crate) fn random_attributes<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}
