use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::{EmbeddingMode, Instance, ModelSpec, Op};
use crate::error::{Error, Result};
use crate::qstate::kernels::pauli_overlap;
use crate::qstate::{apply_mapped, control_mask, AngleRef, Angles, Distribution, GateKind, StateVector, UnitaryMatrix};

#[derive(Clone, Debug)]
struct CompiledGate {
    kind: GateKind,
    targets: Vec<usize>,
    cmask: usize,
    cval: usize,
    angle: Option<AngleRef>,
    matrix: Option<UnitaryMatrix>,
    inverse: Option<UnitaryMatrix>,
}

impl CompiledGate {
    fn apply(&self, amps: &mut [C64], theta: Option<f64>) {
        apply_mapped(amps, self.kind, &self.targets, self.cmask, self.cval, theta, self.matrix.as_ref());
    }

    fn apply_inverse(&self, amps: &mut [C64], theta: Option<f64>) {
        match self.kind {
            GateKind::ArbitraryUnitary => {
                apply_mapped(amps, self.kind, &self.targets, self.cmask, self.cval, None, self.inverse.as_ref())
            }
            _ => apply_mapped(amps, self.kind, &self.targets, self.cmask, self.cval, theta.map(|t| -t), None),
        }
    }
}

/// Qubits that never interact with the rest of the register.
#[derive(Clone, Debug)]
struct Component {
    qpus: Vec<usize>,
    n_local: usize,
    gates: Vec<CompiledGate>,
    /// Global readout indices owned here, ascending.
    readout: Vec<usize>,
    /// Local basis index -> local readout outcome.
    outcome_of: Vec<usize>,
}

impl Component {
    fn n_outcomes(&self) -> usize {
        1 << self.readout.len()
    }

    /// Local outcome of a global readout outcome.
    fn extract(&self, y: usize, n_readout: usize) -> usize {
        let rc = self.readout.len();
        self.readout
            .iter()
            .enumerate()
            .fold(0, |acc, (t, &j)| acc | (((y >> (n_readout - 1 - j)) & 1) << (rc - 1 - t)))
    }
}

/// A measurement-free model compiled for repeated evaluation. The register is
/// split into independent components (groups of QPUs joined by some gate),
/// simulated separately; the joint readout distribution is their product.
#[derive(Clone, Debug)]
pub struct Program {
    n_params: usize,
    n_attributes: usize,
    embedding: EmbeddingMode,
    qpu_sizes: Vec<usize>,
    n_readout: usize,
    components: Vec<Component>,
}

impl Program {
    pub fn compile(model: &ModelSpec) -> Result<Self> {
        if !model.is_deferred() {
            return Err(Error::NotDeferred);
        }
        model.validate()?;
        let n_qpus = model.qpus.len();
        // union-find over QPUs
        let mut parent: Vec<usize> = (0..n_qpus).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            parent[x] = r;
            r
        }
        for op in model.ops() {
            let g = op.gate().expect("deferred models contain gates only");
            let mut support = g.support().map(|q| model.qpu_of(q).expect("validated qubit"));
            if let Some(first) = support.next() {
                for other in support {
                    let (a, b) = (find(&mut parent, first), find(&mut parent, other));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of = vec![usize::MAX; n_qpus];
        for q in 0..n_qpus {
            let root = find(&mut parent, q);
            if group_of[root] == usize::MAX {
                group_of[root] = groups.len();
                groups.push(Vec::new());
            }
            group_of[q] = group_of[root];
            groups[group_of[q]].push(q);
        }

        let mut components: Vec<Component> = groups
            .iter()
            .map(|qpus| Component {
                qpus: qpus.clone(),
                n_local: qpus.iter().map(|&q| model.qpus[q].len()).sum(),
                gates: Vec::new(),
                readout: Vec::new(),
                outcome_of: Vec::new(),
            })
            .collect();
        let local_index = |q: usize| -> (usize, usize) {
            let qpu = model.qpu_of(q).expect("validated qubit");
            let comp = group_of[qpu];
            let offset: usize = groups[comp].iter().take_while(|&&x| x != qpu).map(|&x| model.qpus[x].len()).sum();
            (comp, offset + q - model.qpus[qpu].start)
        };

        for op in model.ops() {
            let Op::Gate(g) = op else { unreachable!("deferred") };
            let comp = local_index(g.targets[0]).0;
            let targets: Vec<usize> = g.targets.iter().map(|&q| local_index(q).1).collect();
            let (cmask, cval) = control_mask(&g.controls, |q| local_index(q).1);
            components[comp].gates.push(CompiledGate {
                kind: g.kind,
                targets,
                cmask,
                cval,
                angle: g.angle,
                matrix: g.matrix.clone(),
                inverse: g.matrix.as_ref().map(UnitaryMatrix::adjoint),
            });
        }
        let mut readout_local: Vec<Vec<usize>> = vec![Vec::new(); components.len()];
        for (j, &q) in model.readout_qubits.iter().enumerate() {
            let (comp, local) = local_index(q);
            components[comp].readout.push(j);
            readout_local[comp].push(local);
        }
        for (c, locals) in components.iter_mut().zip(readout_local) {
            let rc = locals.len();
            c.outcome_of = (0..1usize << c.n_local)
                .map(|i| locals.iter().enumerate().fold(0, |acc, (t, &p)| acc | (((i >> p) & 1) << (rc - 1 - t))))
                .collect();
        }
        Ok(Self {
            n_params: model.param_slots,
            n_attributes: model.n_attributes(),
            embedding: model.embedding,
            qpu_sizes: model.qpus.iter().map(|r| r.len()).collect(),
            n_readout: model.readout_qubits.len(),
            components,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_outcomes(&self) -> usize {
        1 << self.n_readout
    }

    /// Number of independently simulated register components.
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    fn check(&self, params: &[f64], instance: &Instance) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::DimensionMismatch { expected: self.n_params, got: params.len() });
        }
        match (self.embedding, instance) {
            (EmbeddingMode::Angle, Instance::Attributes(a)) if a.len() == self.n_attributes => Ok(()),
            (EmbeddingMode::Angle, Instance::Attributes(a)) => {
                Err(Error::DimensionMismatch { expected: self.n_attributes, got: a.len() })
            }
            (EmbeddingMode::Haar, Instance::Haar(states)) => {
                if states.len() != self.qpu_sizes.len() {
                    return Err(Error::DimensionMismatch { expected: self.qpu_sizes.len(), got: states.len() });
                }
                for (s, &n) in states.iter().zip(&self.qpu_sizes) {
                    if s.n_qubits() != n {
                        return Err(Error::DimensionMismatch { expected: n, got: s.n_qubits() });
                    }
                }
                Ok(())
            }
            _ => Err(Error::InvalidArgument("instance kind does not match the model's embedding".into())),
        }
    }

    fn run_component(&self, c: &Component, angles: &Angles<'_>, instance: &Instance) -> Result<Vec<C64>> {
        let mut amps = match instance {
            Instance::Haar(states) => {
                let mut it = c.qpus.iter().map(|&q| &states[q]);
                let first = it.next().expect("component has a QPU").clone();
                it.try_fold(first, |low, s| low.tensor(s))?.into_amplitudes()
            }
            Instance::Attributes(_) => StateVector::zero(c.n_local)?.into_amplitudes(),
        };
        for g in &c.gates {
            let theta = g.angle.map(|a| angles.resolve(a)).transpose()?;
            g.apply(&mut amps, theta);
        }
        Ok(amps)
    }

    fn component_probs(c: &Component, amps: &[C64]) -> Vec<f64> {
        let mut p = vec![0.0; c.n_outcomes()];
        for (i, a) in amps.iter().enumerate() {
            p[c.outcome_of[i]] += a.norm_sqr();
        }
        p
    }

    fn joint(&self, local: &[Vec<f64>]) -> Vec<f64> {
        (0..self.n_outcomes())
            .map(|y| {
                self.components
                    .iter()
                    .zip(local)
                    .map(|(c, p)| p[c.extract(y, self.n_readout)])
                    .product()
            })
            .collect()
    }

    /// Product of the other components' probabilities for outcome `y`.
    fn others(&self, skip: usize, local: &[Vec<f64>], y: usize) -> f64 {
        self.components
            .iter()
            .zip(local)
            .enumerate()
            .filter(|(k, _)| *k != skip)
            .map(|(_, (c, p))| p[c.extract(y, self.n_readout)])
            .product()
    }

    fn simulate(&self, params: &[f64], instance: &Instance) -> Result<(Vec<Vec<C64>>, Vec<Vec<f64>>)> {
        self.check(params, instance)?;
        let angles = Angles::new(params, instance.attributes());
        let mut states = Vec::with_capacity(self.components.len());
        let mut local = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let amps = self.run_component(c, &angles, instance)?;
            local.push(Self::component_probs(c, &amps));
            states.push(amps);
        }
        Ok((states, local))
    }

    pub fn forward(&self, params: &[f64], instance: &Instance) -> Result<Distribution> {
        let (_, local) = self.simulate(params, instance)?;
        Distribution::new(self.n_readout, self.joint(&local))
    }

    /// Reverse sweep for several diagonal observables at once. `observables[k]`
    /// gives a weight per local readout outcome; gradients accumulate into
    /// `grads[k]`.
    fn adjoint(
        &self,
        c: &Component,
        angles: &Angles<'_>,
        mut psi: Vec<C64>,
        observables: &[Vec<f64>],
        grads: &mut [Vec<f64>],
    ) -> Result<()> {
        let mut lambdas: Vec<Vec<C64>> = observables
            .iter()
            .map(|obs| psi.iter().enumerate().map(|(i, a)| a * obs[c.outcome_of[i]]).collect())
            .collect();
        for g in c.gates.iter().rev() {
            let theta = g.angle.map(|a| angles.resolve(a)).transpose()?;
            if let Some(AngleRef::Param(slot)) = g.angle {
                let pauli = g.kind.generator().ok_or_else(|| Error::NonDifferentiable(g.kind.to_string()))?;
                for (lambda, grad) in lambdas.iter().zip(grads.iter_mut()) {
                    grad[slot] += pauli_overlap(lambda, &psi, pauli, g.targets[0], g.cmask, g.cval).im;
                }
            }
            g.apply_inverse(&mut psi, theta);
            for lambda in &mut lambdas {
                g.apply_inverse(lambda, theta);
            }
        }
        Ok(())
    }

    /// Readout probabilities and their derivatives, `dP[(y, i)] = dP[y]/dtheta_i`.
    pub fn probs_and_jacobian(&self, params: &[f64], instance: &Instance) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (states, local) = self.simulate(params, instance)?;
        let angles = Angles::new(params, instance.attributes());
        let mut jac = DMatrix::<f64>::zeros(self.n_outcomes(), self.n_params);
        for (k, (c, psi)) in self.components.iter().zip(states).enumerate() {
            if c.readout.is_empty() {
                continue;
            }
            let obs: Vec<Vec<f64>> =
                (0..c.n_outcomes()).map(|u| (0..c.n_outcomes()).map(|v| if u == v { 1.0 } else { 0.0 }).collect()).collect();
            let mut grads = vec![vec![0.0; self.n_params]; c.n_outcomes()];
            self.adjoint(c, &angles, psi, &obs, &mut grads)?;
            for y in 0..self.n_outcomes() {
                let scale = self.others(k, &local, y);
                let g = &grads[c.extract(y, self.n_readout)];
                for (i, v) in g.iter().enumerate() {
                    jac[(y, i)] += scale * v;
                }
            }
        }
        Ok((self.joint(&local), jac))
    }

    /// Readout probabilities and the gradient of `sum_y weights[y] P[y]`.
    pub fn value_and_grad(&self, params: &[f64], instance: &Instance, weights: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.value_and_grad_with(params, instance, |_| weights.to_vec())
    }

    /// Like [`value_and_grad`](Self::value_and_grad), with the weights
    /// computed from the readout probabilities of this evaluation.
    pub fn value_and_grad_with<F>(&self, params: &[f64], instance: &Instance, weights: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let (states, local) = self.simulate(params, instance)?;
        let probs = self.joint(&local);
        let weights = weights(&probs);
        if weights.len() != self.n_outcomes() {
            return Err(Error::DimensionMismatch { expected: self.n_outcomes(), got: weights.len() });
        }
        let angles = Angles::new(params, instance.attributes());
        let mut grad = vec![vec![0.0; self.n_params]];
        for (k, (c, psi)) in self.components.iter().zip(states).enumerate() {
            if c.readout.is_empty() {
                continue;
            }
            let mut obs = vec![0.0; c.n_outcomes()];
            for (y, w) in weights.iter().enumerate() {
                obs[c.extract(y, self.n_readout)] += w * self.others(k, &local, y);
            }
            self.adjoint(c, &angles, psi, &[obs], &mut grad)?;
        }
        Ok((probs, grad.pop().expect("one observable")))
    }
}
