//! Command bodies. Each returns its artifacts as bytes; the caller writes them
//! and records their hashes.

use std::fmt::Write as _;

use dqml_core::circuits::{build_model, forward, Instance, PoolingKind, SchemeKind};
use dqml_core::datagen::{make_dataset_with, sidecar_path, Split, SyntheticDataset};
use dqml_core::distexec::{partition_model, replay, run_partition, DistConfig, NodeStats, TransportKind};
use dqml_core::fisher::{effective_dimension, spectrum_statistics, CapacityConfig, PROB_CUTOFF};
use dqml_core::training::{mean_std, train, TrainRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::{CliError, CliResult, CommandKind, ExperimentConfig};

#[derive(Debug, Default)]
pub struct Output {
    /// (file name, contents), in a fixed order.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
    /// Set when a numerical check failed; artifacts are still written.
    pub failure: Option<String>,
}

pub fn run(command: CommandKind, cfg: &ExperimentConfig) -> CliResult<Output> {
    match command {
        CommandKind::GenData => gen_data(cfg),
        CommandKind::Train => cmd_train(cfg),
        CommandKind::Effdim => effdim(cfg),
        CommandKind::Spectrum => spectrum(cfg),
        CommandKind::DistDemo => dist_demo(cfg),
    }
}

fn pooling_name(p: PoolingKind) -> &'static str {
    match p {
        PoolingKind::Standard => "standard",
        PoolingKind::Dumb => "dumb",
    }
}

fn cells(cfg: &ExperimentConfig, command: CommandKind) -> Vec<(SchemeKind, usize)> {
    let layers = cfg.sublayers_for(command);
    cfg.schemes_for(command).into_iter().flat_map(|s| layers.iter().map(move |&l| (s, l))).collect()
}

pub fn dataset_files(ds: &SyntheticDataset, stem: &str) -> CliResult<Vec<(String, Vec<u8>)>> {
    let mut csv = Vec::new();
    ds.write_csv(&mut csv)?;
    let csv_name = format!("{stem}.csv");
    let side = sidecar_path(std::path::Path::new(&csv_name)).to_string_lossy().into_owned();
    Ok(vec![(csv_name, csv), (side, serde_json::to_string_pretty(&ds.meta)?.into_bytes())])
}

fn load_dataset(cfg: &ExperimentConfig) -> CliResult<SyntheticDataset> {
    Ok(match &cfg.dataset.path {
        Some(p) => SyntheticDataset::load(p)?,
        None => make_dataset_with(&cfg.dataset.config, cfg.seed)?,
    })
}

fn gen_data(cfg: &ExperimentConfig) -> CliResult<Output> {
    let ds = make_dataset_with(&cfg.dataset.config, cfg.seed)?;
    let files = dataset_files(&ds, &format!("dataset_seed{}", cfg.seed))?;
    let summary = format!(
        "dataset seed {}: {} instances ({} train / {} validation), rho_max {:.4}\n",
        cfg.seed,
        ds.len(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Validation).len(),
        ds.meta.rho_max
    );
    Ok(Output { files, summary, failure: None })
}

fn cmd_train(cfg: &ExperimentConfig) -> CliResult<Output> {
    let ds = load_dataset(cfg)?;
    let dim = ds.meta.config.dim;
    let cells = cells(cfg, CommandKind::Train);
    let models = cells
        .iter()
        .map(|&(s, l)| {
            let m = build_model(s, cfg.qubits_per_qpu, l, cfg.pooling)?;
            if m.n_attributes() != dim {
                return Err(CliError::Config(format!(
                    "{s} with {} qubits per QPU embeds {} attributes, dataset has {dim}",
                    cfg.qubits_per_qpu,
                    m.n_attributes()
                )));
            }
            Ok(m)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let results: Vec<Vec<TrainRecord>> =
        models.par_iter().map(|m| train(m, &ds, &cfg.train)).collect::<Result<_, _>>()?;

    let mode = serde_json::to_value(cfg.train.interpret_mode)?.as_str().unwrap_or_default().to_string();
    let mut files = Vec::new();
    let mut trials_csv = format!("{}\n", TrainRecord::CSV_HEADER);
    let mut summary_csv = String::from("scheme,L,interpret,trials,val_acc_mean,val_acc_std,train_acc_mean,train_acc_std\n");
    let mut summary = format!("{:<6}{:>4}  {:>16}  {:>16}\n", "scheme", "L", "val acc (%)", "train acc (%)");
    for (&(scheme, l), records) in cells.iter().zip(&results) {
        let mut jsonl = Vec::new();
        for r in records {
            r.write_jsonl(&mut jsonl)?;
            writeln!(trials_csv, "{}", r.csv_row()).expect("string write");
        }
        files.push((format!("train_{scheme}_L{l}.jsonl"), jsonl));
        let (vm, vs) = mean_std(&records.iter().map(|r| r.final_val_acc).collect::<Vec<_>>());
        let (tm, ts) = mean_std(&records.iter().map(|r| r.final_train_acc).collect::<Vec<_>>());
        writeln!(summary_csv, "{scheme},{l},{mode},{},{vm},{vs},{tm},{ts}", records.len()).expect("string write");
        writeln!(
            summary,
            "{:<6}{:>4}  {:>7.2} +- {:<5.2}  {:>7.2} +- {:<5.2}",
            scheme.to_string(),
            l,
            100.0 * vm,
            100.0 * vs,
            100.0 * tm,
            100.0 * ts
        )
        .expect("string write");
    }
    files.push(("train_trials.csv".into(), trials_csv.into_bytes()));
    files.push(("train_summary.csv".into(), summary_csv.into_bytes()));
    Ok(Output { files, summary, failure: None })
}

fn capacity_config(cfg: &ExperimentConfig, scheme: SchemeKind, l: usize) -> CapacityConfig {
    let c = &cfg.capacity;
    CapacityConfig {
        pooling: cfg.pooling,
        n_theta: c.n_theta,
        n_samples: c.n_samples,
        theta_seed: cfg.seed,
        data_seed: c.data_seed,
        mode: c.mode(cfg.seed),
        tol_rel: c.tol_rel,
        cutoff: PROB_CUTOFF,
        ..CapacityConfig::new(scheme, cfg.qubits_per_qpu, l)
    }
}

fn effdim(cfg: &ExperimentConfig) -> CliResult<Output> {
    let cells = cells(cfg, CommandKind::Effdim);
    let results = cells
        .par_iter()
        .map(|&(s, l)| effective_dimension(&capacity_config(cfg, s, l)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("scheme,qubits_per_qpu,L,effective_dimension,n_params,pooling\n");
    let mut summary = String::new();
    for r in &results {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.scheme,
            r.qubits_per_qpu,
            r.sublayers,
            r.effective_dimension,
            r.n_params,
            pooling_name(r.pooling)
        )
        .expect("string write");
        writeln!(summary, "{:<4} m={} L={:<3} d_eff {:>4} of {:>4} parameters", r.scheme.to_string(), r.qubits_per_qpu, r.sublayers, r.effective_dimension, r.n_params)
            .expect("string write");
    }
    let files = vec![("effdim.csv".into(), csv.into_bytes()), ("effdim.json".into(), serde_json::to_vec_pretty(&results)?)];
    Ok(Output { files, summary, failure: None })
}

fn spectrum(cfg: &ExperimentConfig) -> CliResult<Output> {
    let cells = cells(cfg, CommandKind::Spectrum);
    let reports = cells
        .par_iter()
        .map(|&(s, l)| spectrum_statistics(&capacity_config(cfg, s, l)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut files = Vec::new();
    let mut csv = String::from("scheme,L,n_matrices,n_eigenvalues,mean_log10,sigma_log,sigma_log10\n");
    let mut summary = String::new();
    for r in &reports {
        let mut hist = Vec::new();
        r.histogram.write_csv(&mut hist)?;
        files.push((format!("spectrum_{}_L{}.csv", r.scheme, r.sublayers), hist));
        writeln!(csv, "{},{},{},{},{},{},{}", r.scheme, r.sublayers, r.n_matrices, r.n_eigenvalues, r.mean_log10, r.sigma_log, r.sigma_log10)
            .expect("string write");
        writeln!(summary, "{:<4} L={:<3} sigma_log {:.3}  mean_log10 {:.3}  ({} eigenvalues)", r.scheme.to_string(), r.sublayers, r.sigma_log, r.mean_log10, r.n_eigenvalues)
            .expect("string write");
    }
    files.push(("spectrum_summary.csv".into(), csv.into_bytes()));
    Ok(Output { files, summary, failure: None })
}

#[derive(Serialize)]
struct DistRunReport {
    scheme: SchemeKind,
    sublayers: usize,
    instance: usize,
    distributed: Vec<f64>,
    monolithic: Vec<f64>,
    max_deviation: f64,
    replay_identical: bool,
    joint_branches: usize,
    messages: [usize; 2],
    stats: [NodeStats; 2],
}

#[derive(Serialize)]
struct DistReport {
    tolerance: f64,
    max_deviation: f64,
    runs: Vec<DistRunReport>,
}

fn dist_demo(cfg: &ExperimentConfig) -> CliResult<Output> {
    let ds = load_dataset(cfg)?;
    let instances: Vec<Instance> =
        ds.labeled(Split::Validation).into_iter().take(cfg.dist.instances).map(|(x, _)| x).collect();
    let dcfg = DistConfig { mode: cfg.dist.mode, transport: TransportKind::Loopback { port: cfg.dist.port } };
    let mut files = Vec::new();
    let mut runs = Vec::new();
    let mut summary = String::new();
    for (scheme, l) in cells(cfg, CommandKind::DistDemo) {
        let model = build_model(scheme, cfg.qubits_per_qpu, l, cfg.pooling)?;
        let partition = partition_model(&model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params: Vec<f64> = (0..model.param_slots).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        for (k, inst) in instances.iter().enumerate() {
            let run = run_partition(&partition, &params, inst, &dcfg)?;
            let mono = forward(&model, &params, inst)?;
            let replayed = replay(&partition, &params, inst, &run.transcript)?;
            files.push((format!("dist_transcript_{scheme}_L{l}_i{k}.json"), serde_json::to_vec_pretty(&run.transcript)?));
            runs.push(DistRunReport {
                scheme,
                sublayers: l,
                instance: k,
                max_deviation: run.distribution.max_abs_diff(&mono),
                replay_identical: replayed == run.distribution,
                distributed: run.distribution.probs().to_vec(),
                monolithic: mono.into_probs(),
                joint_branches: run.ledger.branches.len(),
                messages: [run.transcript.messages[0].len(), run.transcript.messages[1].len()],
                stats: run.stats,
            });
        }
    }
    let max_deviation = runs.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    for r in &runs {
        writeln!(
            summary,
            "{:<3} L={} instance {}: {} joint branches, messages A->B {} B->A {}, deviation {:.2e}",
            r.scheme.to_string(),
            r.sublayers,
            r.instance,
            r.joint_branches,
            r.messages[0],
            r.messages[1],
            r.max_deviation
        )
        .expect("string write");
    }
    writeln!(summary, "max deviation vs single-register simulation: {max_deviation:.3e}").expect("string write");
    let mut failure = None;
    if !(max_deviation < cfg.dist.tolerance) {
        failure = Some(format!("max deviation {max_deviation:e} exceeds {:e}", cfg.dist.tolerance));
    } else if let Some(r) = runs.iter().find(|r| !r.replay_identical) {
        failure = Some(format!("transcript replay of {} L={} instance {} differs", r.scheme, r.sublayers, r.instance));
    }
    let report = DistReport { tolerance: cfg.dist.tolerance, max_deviation, runs };
    files.push(("dist_report.json".into(), serde_json::to_vec_pretty(&report)?));
    Ok(Output { files, summary, failure })
}
