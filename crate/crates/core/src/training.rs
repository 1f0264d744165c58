//! Adam training of circuit angles and interpret weights.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{to_deferred, Instance, ModelSpec, Program, SchemeKind};
use crate::datagen::{Split, SyntheticDataset};
use crate::error::{Error, Result};
use crate::gradients::{interpret, loss_and_grad};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpretMode {
    /// Weights start at parity and are trained jointly with the angles.
    Trained,
    /// Weights stay at parity.
    ParityFixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub interpret_mode: InterpretMode,
    /// Validation accuracy is evaluated every this many iterations and at the
    /// last one.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            iterations: 1000,
            batch_size: 512,
            trials: 10,
            seed: 0,
            interpret_mode: InterpretMode::Trained,
            val_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument(format!("step size {} must be positive", self.step_size)));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must be between 1 and the training-set size {n_train}",
                self.batch_size
            )));
        }
        if self.iterations == 0 || self.trials == 0 || self.val_every == 0 {
            return Err(Error::InvalidArgument("iterations, trials and validation interval must be positive".into()));
        }
        Ok(())
    }

    /// Seed of one trial; trials with equal seeds share initial angles and
    /// batch order.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

/// `(-1)^(number of ones in y)` for every outcome `y`.
pub fn parity_weights(n_outcomes: usize) -> Vec<f64> {
    (0..n_outcomes).map(|y: usize| if y.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 }).collect()
}

/// Sign of `f_int`, with 0 mapped to +1.
pub fn predict(f_int: f64) -> i8 {
    if f_int >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], step_size: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grads.len().min(params.len()) });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= step_size * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Fraction of instances whose predicted label matches.
pub fn accuracy(program: &Program, params: &[f64], weights: &[f64], data: &[(Instance, f64)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("accuracy data"));
    }
    let hits: Vec<bool> = data
        .par_iter()
        .map(|(inst, label)| -> Result<bool> {
            let p = program.forward(params, inst)?;
            Ok(predict(interpret(p.probs(), weights)?) as f64 == *label)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub scheme: SchemeKind,
    pub sublayers: usize,
    pub trial: usize,
    pub seed: u64,
    pub interpret_mode: InterpretMode,
    /// Batch loss before each update.
    pub loss: Vec<f64>,
    /// Batch accuracy before each update.
    pub train_acc: Vec<f64>,
    /// Validation accuracy after each update, carried forward between
    /// evaluations (the initial value is that of the starting parameters).
    pub val_acc: Vec<f64>,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
    pub final_params: Vec<f64>,
    pub final_weights: Vec<f64>,
}

#[derive(Serialize)]
struct IterationLine<'a> {
    scheme: &'a str,
    sublayers: usize,
    trial: usize,
    iteration: usize,
    loss: f64,
    train_acc: f64,
    val_acc: f64,
}

impl TrainRecord {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.loss.len() {
            let line = IterationLine {
                scheme: self.scheme.short_name(),
                sublayers: self.sublayers,
                trial: self.trial,
                iteration: i + 1,
                loss: self.loss[i],
                train_acc: self.train_acc[i],
                val_acc: self.val_acc[i],
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "scheme,L,trial,seed,final_train_acc,final_val_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.scheme, self.sublayers, self.trial, self.seed, self.final_train_acc, self.final_val_acc
        )
    }
}

/// Runs `config.trials` independent trials on the dataset's split.
pub fn train(model: &ModelSpec, dataset: &SyntheticDataset, config: &TrainConfig) -> Result<Vec<TrainRecord>> {
    let train_set = dataset.labeled(Split::Train);
    let val_set = dataset.labeled(Split::Validation);
    (0..config.trials).map(|t| train_trial(model, &train_set, &val_set, config, t)).collect()
}

pub fn train_trial(
    model: &ModelSpec,
    train_set: &[(Instance, f64)],
    val_set: &[(Instance, f64)],
    config: &TrainConfig,
    trial: usize,
) -> Result<TrainRecord> {
    config.validate(train_set.len())?;
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let program = Program::compile(&to_deferred(model))?;
    let seed = config.trial_seed(trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.param_slots;
    let mut theta: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut weights = parity_weights(model.n_outcomes());
    let joint = config.interpret_mode == InterpretMode::Trained;
    let mut adam = Adam::new(if joint { d + weights.len() } else { d });
    let mut flat: Vec<f64> = Vec::with_capacity(d + weights.len());

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = usize::MAX;
    let mut batch: Vec<(Instance, f64)> = Vec::with_capacity(config.batch_size);
    let (mut loss, mut train_acc, mut val_acc) = (Vec::new(), Vec::new(), Vec::new());
    let mut last_val = accuracy(&program, &theta, &weights, val_set)?;
    for it in 1..=config.iterations {
        if cursor == usize::MAX || cursor + config.batch_size > order.len() {
            order = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        batch.clear();
        batch.extend(order[cursor..cursor + config.batch_size].iter().map(|&i| train_set[i].clone()));
        cursor += config.batch_size;

        let lg = loss_and_grad(&program, &theta, &weights, &batch)?;
        let hits = lg.f_int.iter().zip(&batch).filter(|(f, (_, l))| predict(**f) as f64 == *l).count();
        loss.push(lg.loss);
        train_acc.push(hits as f64 / batch.len() as f64);

        flat.clear();
        flat.extend(&theta);
        let mut grads = lg.dl_dtheta;
        if joint {
            flat.extend(&weights);
            grads.extend(lg.dl_dw);
        }
        adam.step(&mut flat, &grads, config.step_size)?;
        theta.copy_from_slice(&flat[..d]);
        if joint {
            weights.copy_from_slice(&flat[d..]);
        }

        if it % config.val_every == 0 || it == config.iterations {
            last_val = accuracy(&program, &theta, &weights, val_set)?;
        }
        val_acc.push(last_val);
    }
    Ok(TrainRecord {
        scheme: model.scheme,
        sublayers: model.sublayers,
        trial,
        seed,
        interpret_mode: config.interpret_mode,
        loss,
        train_acc,
        final_train_acc: accuracy(&program, &theta, &weights, train_set)?,
        final_val_acc: last_val,
        val_acc,
        final_params: theta,
        final_weights: weights,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
