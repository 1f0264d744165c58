//! Derivatives of readout probabilities and of the training loss.
//!
//! Exact derivatives come from the adjoint sweep of [`Program`]; central
//! finite differences and the two-term parameter-shift rule serve as
//! independent checks.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{forward, to_deferred, Instance, ModelSpec, Op, Program};
use crate::error::{Error, Result};
use crate::qstate::AngleRef;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    /// `dP[(y, i)] = dP[y]/dtheta_i`
    #[serde(rename = "dP")]
    pub dp: DMatrix<f64>,
    pub dl_dtheta: Vec<f64>,
    pub dl_dw: Vec<f64>,
}

/// Exact `dP[y]/dtheta_i` of a measurement-free model.
pub fn adjoint_gradient(model: &ModelSpec, params: &[f64], instance: &Instance) -> Result<DMatrix<f64>> {
    Ok(Program::compile(model)?.probs_and_jacobian(params, instance)?.1)
}

/// Central differences of [`forward`]. Works on branching and deferred models.
pub fn finite_diff_gradient(model: &ModelSpec, params: &[f64], instance: &Instance, step: f64) -> Result<DMatrix<f64>> {
    if step == 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let mut jac = DMatrix::zeros(model.n_outcomes(), params.len());
    let mut shifted = params.to_vec();
    for i in 0..params.len() {
        shifted[i] = params[i] + step;
        let plus = forward(model, &shifted, instance)?;
        shifted[i] = params[i] - step;
        let minus = forward(model, &shifted, instance)?;
        shifted[i] = params[i];
        for y in 0..model.n_outcomes() {
            jac[(y, i)] = (plus.get(y) - minus.get(y)) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Slots whose every occurrence is an uncontrolled, unconditioned Pauli
/// rotation.
pub fn uncontrolled_slots(model: &ModelSpec) -> Vec<usize> {
    let mut ok = vec![true; model.param_slots];
    for op in model.ops() {
        let (g, conditioned) = match op {
            Op::Gate(g) => (g, false),
            Op::Conditional { gate, .. } => (gate, true),
            Op::Measure { .. } => continue,
        };
        if let Some(AngleRef::Param(s)) = g.angle {
            if conditioned || !g.controls.is_empty() || !g.kind.is_rotation() {
                ok[s] = false;
            }
        }
    }
    ok.iter().enumerate().filter(|(_, &v)| v).map(|(s, _)| s).collect()
}

/// Two-term parameter-shift derivatives for the given slots; columns of all
/// other slots are zero.
pub fn parameter_shift_gradient(
    model: &ModelSpec,
    params: &[f64],
    instance: &Instance,
    slots: &[usize],
) -> Result<DMatrix<f64>> {
    let allowed = uncontrolled_slots(model);
    let shift = std::f64::consts::FRAC_PI_2;
    let mut jac = DMatrix::zeros(model.n_outcomes(), params.len());
    let mut shifted = params.to_vec();
    for &i in slots {
        if !allowed.contains(&i) {
            return Err(Error::NonDifferentiable(format!("slot {i} is not an uncontrolled rotation")));
        }
        shifted[i] = params[i] + shift;
        let plus = forward(model, &shifted, instance)?;
        shifted[i] = params[i] - shift;
        let minus = forward(model, &shifted, instance)?;
        shifted[i] = params[i];
        for y in 0..model.n_outcomes() {
            jac[(y, i)] = 0.5 * (plus.get(y) - minus.get(y));
        }
    }
    Ok(jac)
}

/// `f_int = sum_y w[y] P[y]`
pub fn interpret(probs: &[f64], weights: &[f64]) -> Result<f64> {
    if probs.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: weights.len() });
    }
    Ok(probs.iter().zip(weights).map(|(p, w)| p * w).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossGrad {
    pub loss: f64,
    /// `f_int` of every batch instance, in batch order.
    pub f_int: Vec<f64>,
    pub dl_dtheta: Vec<f64>,
    pub dl_dw: Vec<f64>,
}

/// Mean squared error between labels and `f_int` over the batch, with its
/// gradients in the circuit angles and the interpret weights.
pub fn loss_and_grad(program: &Program, params: &[f64], weights: &[f64], batch: &[(Instance, f64)]) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if weights.len() != program.n_outcomes() {
        return Err(Error::DimensionMismatch { expected: program.n_outcomes(), got: weights.len() });
    }
    let scale = 1.0 / batch.len() as f64;
    let terms: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|(instance, label)| -> Result<Vec<f64>> {
            let mut residual = 0.0;
            let (probs, dtheta) = program.value_and_grad_with(params, instance, |p| {
                residual = label - interpret(p, weights).expect("sizes checked");
                weights.iter().map(|w| -2.0 * residual * scale * w).collect()
            })?;
            let mut out = Vec::with_capacity(2 + dtheta.len() + probs.len());
            out.push(label - residual);
            out.push(residual * residual * scale);
            out.extend(dtheta);
            out.extend(probs.iter().map(|p| -2.0 * residual * scale * p));
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let f_int = terms.iter().map(|t| t[0]).collect();
    let total = pairwise_sum(&terms);
    let d = params.len();
    Ok(LossGrad { loss: total[1], f_int, dl_dtheta: total[2..d + 2].to_vec(), dl_dw: total[d + 2..].to_vec() })
}

/// Element-wise sum with a fixed pairwise tree, independent of thread count.
pub fn pairwise_sum(rows: &[Vec<f64>]) -> Vec<f64> {
    match rows.len() {
        0 => Vec::new(),
        1 => rows[0].clone(),
        n => {
            let (a, b) = rows.split_at(n / 2);
            let mut left = pairwise_sum(a);
            for (x, y) in left.iter_mut().zip(pairwise_sum(b)) {
                *x += y;
            }
            left
        }
    }
}

/// Full gradient record for one instance: `dP` by the adjoint sweep on the
/// deferred form and the single-instance loss gradients.
pub fn gradient_record(model: &ModelSpec, params: &[f64], weights: &[f64], instance: &Instance, label: f64) -> Result<GradientRecord> {
    let deferred = if model.is_deferred() { model.clone() } else { to_deferred(model) };
    let program = Program::compile(&deferred)?;
    let (_, dp) = program.probs_and_jacobian(params, instance)?;
    let lg = loss_and_grad(&program, params, weights, &[(instance.clone(), label)])?;
    Ok(GradientRecord { dp, dl_dtheta: lg.dl_dtheta, dl_dw: lg.dl_dw })
}
