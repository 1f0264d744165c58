//! Fisher information of the readout distribution, effective dimension, and
//! log-eigenvalue spectra over Haar-random inputs.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{build_model_with, to_deferred, EmbeddingMode, Instance, ModelConfig, ModelSpec, PoolingKind, Program, SchemeKind};
use crate::datagen::haar_dataset;
use crate::error::{Error, Result};

pub const RANK_TOL_REL: f64 = 1e-8;
pub const RANK_ABS_FLOOR: f64 = 1e-12;
/// Outcome terms with smaller probability are left out of the Fisher sum.
pub const PROB_CUTOFF: f64 = 1e-12;
pub const HIST_BIN_WIDTH: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FisherMode {
    /// Sum over outcomes weighted by their probabilities.
    Expected,
    /// One outcome drawn per input from the model's distribution.
    Sampled { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherMeta {
    pub scheme: SchemeKind,
    pub sublayers: usize,
    pub qubits_per_qpu: usize,
    pub pooling: PoolingKind,
    pub theta_seed: u64,
    pub data_seed: u64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    #[serde(rename = "F")]
    pub f: DMatrix<f64>,
    pub rank: usize,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub meta: FisherMeta,
}

/// `F_ij = 1/N sum_n sum_y p(y|x_n) d_i log p d_j log p`.
pub fn fisher_matrix(program: &Program, params: &[f64], inputs: &[Instance], mode: FisherMode, cutoff: f64) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(Error::Empty("Fisher inputs"));
    }
    let d = program.n_params();
    let blocks: Vec<(Vec<f64>, DMatrix<f64>)> =
        inputs.par_iter().map(|x| program.probs_and_jacobian(params, x)).collect::<Result<_>>()?;
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0;
    let mut push_row = |jac: &DMatrix<f64>, y: usize, scale: f64| {
        rows.extend(jac.row(y).iter().map(|v| v * scale));
        n_rows += 1;
    };
    match mode {
        FisherMode::Expected => {
            for (p, jac) in &blocks {
                for (y, &py) in p.iter().enumerate() {
                    if py >= cutoff {
                        // p (dp/p)(dp/p)^T = (dp/sqrt p)(dp/sqrt p)^T
                        push_row(jac, y, 1.0 / py.sqrt());
                    }
                }
            }
        }
        FisherMode::Sampled { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (p, jac) in &blocks {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let y = p.iter().position(|&py| {
                    acc += py;
                    u < acc
                });
                let y = y.unwrap_or(p.len() - 1);
                if p[y] >= cutoff {
                    push_row(jac, y, 1.0 / p[y]);
                }
            }
        }
    }
    let r = DMatrix::from_row_slice(n_rows, d, &rows);
    let mut f = r.tr_mul(&r) / inputs.len() as f64;
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (f[(i, j)] + f[(j, i)]);
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    Ok(f)
}

fn check_symmetric(f: &DMatrix<f64>) -> Result<()> {
    if !f.is_square() {
        return Err(Error::InvalidArgument("Fisher matrix must be square".into()));
    }
    let scale = f.amax().max(1.0);
    if (f - f.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    Ok(())
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigenvalues(f: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(f)?;
    let mut ev: Vec<f64> = SymmetricEigen::new(f.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Eigenvalue threshold for "nonzero".
pub fn rank_threshold(lambda_max: f64, tol_rel: f64) -> f64 {
    (tol_rel * lambda_max).max(RANK_ABS_FLOOR)
}

pub fn rank_of_spectrum(ev: &[f64], tol_rel: f64) -> usize {
    let max = ev.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    let t = rank_threshold(max, tol_rel);
    ev.iter().filter(|&&v| v > t).count()
}

pub fn numerical_rank(f: &DMatrix<f64>, tol_rel: f64) -> Result<usize> {
    Ok(rank_of_spectrum(&eigenvalues(f)?, tol_rel))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityConfig {
    pub scheme: SchemeKind,
    pub qubits_per_qpu: usize,
    pub sublayers: usize,
    pub pooling: PoolingKind,
    pub n_theta: usize,
    pub n_samples: usize,
    pub theta_seed: u64,
    pub data_seed: u64,
    pub mode: FisherMode,
    pub tol_rel: f64,
    pub cutoff: f64,
}

impl CapacityConfig {
    pub fn new(scheme: SchemeKind, qubits_per_qpu: usize, sublayers: usize) -> Self {
        Self {
            scheme,
            qubits_per_qpu,
            sublayers,
            pooling: PoolingKind::Standard,
            n_theta: 20,
            n_samples: 500,
            theta_seed: 0,
            data_seed: 1,
            mode: FisherMode::Expected,
            tol_rel: RANK_TOL_REL,
            cutoff: PROB_CUTOFF,
        }
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let cfg = ModelConfig::new(self.scheme, self.qubits_per_qpu, self.sublayers)
            .with_pooling(self.pooling)
            .with_embedding(EmbeddingMode::Haar);
        Ok(to_deferred(&build_model_with(&cfg)?))
    }

    /// Haar inputs; equal data seeds give equal inputs for every two-QPU scheme.
    pub fn inputs(&self) -> Result<Vec<Instance>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
        haar_dataset(self.n_samples, self.qubits_per_qpu, self.scheme.n_qpus(), &mut rng)
    }

    /// Parameter sets, uniform over `[0, 2pi)^d`.
    pub fn theta_sets(&self, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.theta_seed);
        (0..self.n_theta).map(|_| (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect()).collect()
    }

    fn meta(&self) -> FisherMeta {
        FisherMeta {
            scheme: self.scheme,
            sublayers: self.sublayers,
            qubits_per_qpu: self.qubits_per_qpu,
            pooling: self.pooling,
            theta_seed: self.theta_seed,
            data_seed: self.data_seed,
            n_samples: self.n_samples,
        }
    }
}

/// Fisher reports for every parameter set of the configuration.
pub fn fisher_reports(cfg: &CapacityConfig) -> Result<Vec<FisherReport>> {
    let model = cfg.model()?;
    let program = Program::compile(&model)?;
    let inputs = cfg.inputs()?;
    cfg.theta_sets(model.param_slots)
        .iter()
        .map(|theta| {
            let f = fisher_matrix(&program, theta, &inputs, cfg.mode, cfg.cutoff)?;
            let ev = eigenvalues(&f)?;
            Ok(FisherReport { rank: rank_of_spectrum(&ev, cfg.tol_rel), f, eigenvalues: ev, meta: cfg.meta() })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDimension {
    pub scheme: SchemeKind,
    pub qubits_per_qpu: usize,
    pub sublayers: usize,
    pub pooling: PoolingKind,
    pub n_params: usize,
    pub ranks: Vec<usize>,
    pub effective_dimension: usize,
}

/// Maximum Fisher rank over the configuration's parameter sets.
pub fn effective_dimension(cfg: &CapacityConfig) -> Result<EffectiveDimension> {
    let model = cfg.model()?;
    let program = Program::compile(&model)?;
    let inputs = cfg.inputs()?;
    let ranks = cfg
        .theta_sets(model.param_slots)
        .par_iter()
        .map(|theta| numerical_rank(&fisher_matrix(&program, theta, &inputs, cfg.mode, cfg.cutoff)?, cfg.tol_rel))
        .collect::<Result<Vec<_>>>()?;
    Ok(EffectiveDimension {
        scheme: cfg.scheme,
        qubits_per_qpu: cfg.qubits_per_qpu,
        sublayers: cfg.sublayers,
        pooling: cfg.pooling,
        n_params: model.param_slots,
        effective_dimension: ranks.iter().copied().max().unwrap_or(0),
        ranks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Index of the first bin; bin `k` covers `[k w, (k + 1) w)` in log10.
    pub first_bin: i64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Contiguous bins from the smallest to the largest value.
    pub fn from_logs(logs: &[f64], bin_width: f64) -> Self {
        let index = |v: f64| (v / bin_width).floor() as i64;
        let Some(lo) = logs.iter().map(|&v| index(v)).min() else {
            return Self { bin_width, first_bin: 0, counts: Vec::new() };
        };
        let hi = logs.iter().map(|&v| index(v)).max().expect("non-empty");
        let mut counts = vec![0; (hi - lo + 1) as usize];
        for &v in logs {
            counts[(index(v) - lo) as usize] += 1;
        }
        Self { bin_width, first_bin: lo, counts }
    }

    pub fn bin_left(&self, k: usize) -> f64 {
        (self.first_bin + k as i64) as f64 * self.bin_width
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_left_log10,count")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{:.2},{c}", self.bin_left(k))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub scheme: SchemeKind,
    pub sublayers: usize,
    pub n_matrices: usize,
    pub n_eigenvalues: usize,
    pub mean_log10: f64,
    /// Standard deviation of the natural logarithms of the nonzero eigenvalues.
    pub sigma_log: f64,
    /// The same spread in log10 units (the histogram's axis).
    pub sigma_log10: f64,
    pub histogram: Histogram,
}

/// Pools the nonzero eigenvalues of `cfg.n_theta` Fisher matrices.
pub fn spectrum_statistics(cfg: &CapacityConfig) -> Result<SpectrumReport> {
    let model = cfg.model()?;
    let program = Program::compile(&model)?;
    let inputs = cfg.inputs()?;
    let spectra = cfg
        .theta_sets(model.param_slots)
        .par_iter()
        .map(|theta| {
            let ev = eigenvalues(&fisher_matrix(&program, theta, &inputs, cfg.mode, cfg.cutoff)?)?;
            let max = ev.iter().copied().fold(0.0, f64::max);
            let t = rank_threshold(max, cfg.tol_rel);
            Ok(ev.into_iter().filter(|&v| max > 0.0 && v > t).map(f64::log10).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<f64> = spectra.into_iter().flatten().collect();
    if logs.is_empty() {
        return Err(Error::Empty("nonzero eigenvalues"));
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let sigma = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(SpectrumReport {
        scheme: cfg.scheme,
        sublayers: cfg.sublayers,
        n_matrices: cfg.n_theta,
        n_eigenvalues: logs.len(),
        mean_log10: mean,
        sigma_log: sigma * std::f64::consts::LN_10,
        sigma_log10: sigma,
        histogram: Histogram::from_logs(&logs, HIST_BIN_WIDTH),
    })
}
