//! Acceptance criteria. Every criterion prints one `ACCEPTANCE PASS|FAIL` line
//! directly to stdout (bypassing libtest capture). A failing criterion fails its
//! test unless it is listed in `KNOWN_GAPS`, which README.md documents.

use std::io::Write;
use std::sync::OnceLock;

use dqml_core::circuits::{
    build_model, embed_params, forward_branching, forward_deferred, to_deferred, EmbeddingMode, Instance, ModelSpec,
    PoolingKind, Program, SchemeKind,
};
use dqml_core::datagen::{make_dataset, Split};
use dqml_core::distexec::{run_distributed, DistConfig, ExecMode, TransportKind};
use dqml_core::fisher::{effective_dimension, fisher_reports, spectrum_statistics, CapacityConfig, FisherMode};
use dqml_core::gradients::{
    adjoint_gradient, finite_diff_gradient, interpret, parameter_shift_gradient, uncontrolled_slots, DEFAULT_FD_STEP,
};
use dqml_core::training::{mean_std, parity_weights, train, InterpretMode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use SchemeKind::{ClassicalComm as Cc, NoComm as Nc, NonDistributed as Non, QuantumComm as Qc};

/// Criteria that are reported as FAIL without failing the test run.
const KNOWN_GAPS: &[&str] = &["accuracy.non_band", "parity_fixed.cc_drop", "dumb_pooling.equality"];

const TAU: f64 = std::f64::consts::TAU;

struct Suite {
    unexpected: Vec<String>,
}

impl Suite {
    fn new() -> Self {
        Self { unexpected: Vec::new() }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        let known = !pass && KNOWN_GAPS.contains(&name);
        let tag = if pass { "PASS" } else { "FAIL" };
        let note = if known { " [known gap]" } else { "" };
        let mut out = std::io::stdout().lock();
        writeln!(out, "ACCEPTANCE {tag} {name}: {detail}{note}").unwrap();
        if !pass && !known {
            self.unexpected.push(name.to_string());
        }
    }

    fn finish(self) {
        assert!(self.unexpected.is_empty(), "failed criteria: {:?}", self.unexpected);
    }
}

fn std_model(scheme: SchemeKind, l: usize) -> ModelSpec {
    build_model(scheme, 4, l, PoolingKind::Standard).unwrap()
}

fn draw(model: &ModelSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Instance) {
    let params = (0..model.param_slots).map(|_| rng.random_range(0.0..TAU)).collect();
    let attrs = (0..model.n_attributes()).map(|_| rng.random_range(-1.0..1.0) * std::f64::consts::PI).collect();
    (params, Instance::Attributes(attrs))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// Exactness suite

#[test]
fn deferred_measurement_equivalence() {
    let mut suite = Suite::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for scheme in SchemeKind::ALL {
        for l in 1..=4 {
            let model = std_model(scheme, l);
            let program = Program::compile(&to_deferred(&model)).unwrap();
            for _ in 0..50 {
                let (params, inst) = draw(&model, &mut rng);
                let branching = forward_branching(&model, &params, &inst).unwrap().distribution;
                let deferred = forward_deferred(&model, &params, &inst).unwrap();
                let compiled = program.forward(&params, &inst).unwrap();
                worst = worst.max(branching.max_abs_diff(&deferred)).max(branching.max_abs_diff(&compiled));
                runs += 1;
            }
        }
    }
    for scheme in [Non, Nc, Qc] {
        for l in 1..=4 {
            let model = build_model(scheme, 4, l, PoolingKind::Dumb).unwrap();
            for _ in 0..10 {
                let (params, inst) = draw(&model, &mut rng);
                let branching = forward_branching(&model, &params, &inst).unwrap().distribution;
                worst = worst.max(branching.max_abs_diff(&forward_deferred(&model, &params, &inst).unwrap()));
                runs += 1;
            }
        }
    }
    suite.check(
        "exact.deferred_measurement",
        worst <= 1e-10,
        format!("max |branching - deferred| = {worst:.2e} over {runs} draws (tol 1e-10)"),
    );
    suite.finish();
}

#[test]
fn distributed_equivalence() {
    let mut suite = Suite::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    let configs = [
        DistConfig { mode: ExecMode::Sequential, transport: TransportKind::InProcess },
        DistConfig { mode: ExecMode::Threaded, transport: TransportKind::InProcess },
        DistConfig { mode: ExecMode::Threaded, transport: TransportKind::Loopback { port: 0 } },
        DistConfig { mode: ExecMode::Sequential, transport: TransportKind::Loopback { port: 0 } },
    ];
    for scheme in [Nc, Cc] {
        for l in 1..=3 {
            let model = std_model(scheme, l);
            for _ in 0..5 {
                let (params, inst) = draw(&model, &mut rng);
                let mono = forward_branching(&model, &params, &inst).unwrap().distribution;
                for cfg in &configs {
                    let run = run_distributed(&model, &params, &inst, cfg).unwrap();
                    worst = worst.max(mono.max_abs_diff(&run.distribution));
                    runs += 1;
                }
            }
        }
    }
    suite.check(
        "exact.distributed",
        worst <= 1e-10,
        format!("max |distributed - monolithic| = {worst:.2e} over {runs} runs, in-process and TCP (tol 1e-10)"),
    );
    suite.finish();
}

#[test]
fn subset_embedding() {
    let mut suite = Suite::new();
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    let mut cc_vs_nc: f64 = 0.0;
    let mut factor: f64 = 0.0;
    let mut qc_vs_cc: f64 = 0.0;
    for l in 1..=4 {
        let nc = std_model(Nc, l);
        let cc = std_model(Cc, l);
        let ops: Vec<_> = to_deferred(&cc).ops().cloned().collect();
        let superset =
            ModelSpec::custom(Qc, EmbeddingMode::Angle, cc.qpus.clone(), ops, cc.param_slots, cc.readout_qubits.clone())
                .unwrap();
        assert!(!superset.has_mid_circuit_measurement());
        for _ in 0..20 {
            let (params, inst) = draw(&nc, &mut rng);
            let lifted = embed_params(&nc, &cc, &params).unwrap();
            let p_nc = forward_branching(&nc, &params, &inst).unwrap().distribution;
            let p_cc = forward_branching(&cc, &lifted.0, &inst).unwrap().distribution;
            cc_vs_nc = cc_vs_nc.max(p_nc.max_abs_diff(&p_cc));

            // readout index y = 2 a + b
            let p = p_nc.probs();
            let pa = [p[0] + p[1], p[2] + p[3]];
            let pb = [p[0] + p[2], p[1] + p[3]];
            for a in 0..2 {
                for b in 0..2 {
                    factor = factor.max((p[2 * a + b] - pa[a] * pb[b]).abs());
                }
            }

            let (cc_params, _) = draw(&cc, &mut rng);
            let want = forward_branching(&cc, &cc_params, &inst).unwrap().distribution;
            let got = forward_deferred(&superset, &cc_params, &inst).unwrap();
            qc_vs_cc = qc_vs_cc.max(want.max_abs_diff(&got));
        }
    }
    suite.check(
        "exact.cc_zero_links_is_nc",
        cc_vs_nc <= 1e-12,
        format!("max |CC(links=0) - NC| = {cc_vs_nc:.2e} (tol 1e-12)"),
    );
    suite.check(
        "exact.nc_factorizes",
        factor <= 1e-12,
        format!("max |P(a,b) - P_A(a) P_B(b)| = {factor:.2e} (tol 1e-12)"),
    );
    suite.check(
        "exact.qc_contains_cc",
        qc_vs_cc <= 1e-12,
        format!("max |CC - nonlocal-controlled rewrite| = {qc_vs_cc:.2e} (tol 1e-12)"),
    );
    suite.finish();
}

#[test]
fn gradient_checks() {
    let mut suite = Suite::new();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst_rel: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut shifted_slots = 0;
    for scheme in SchemeKind::ALL {
        let model = std_model(scheme, 2);
        let deferred = to_deferred(&model);
        let slots = uncontrolled_slots(&model);
        shifted_slots += slots.len();
        for _ in 0..20 {
            let (params, inst) = draw(&model, &mut rng);
            let adj = adjoint_gradient(&deferred, &params, &inst).unwrap();
            let fd = finite_diff_gradient(&model, &params, &inst, DEFAULT_FD_STEP).unwrap();
            worst_rel = worst_rel.max((&adj - &fd).norm() / fd.norm().max(1e-300));
            let ps = parameter_shift_gradient(&model, &params, &inst, &slots).unwrap();
            for &s in &slots {
                worst_shift = worst_shift.max(max_diff(adj.column(s).as_slice(), ps.column(s).as_slice()));
            }
        }
    }
    suite.check(
        "exact.adjoint_vs_fd",
        worst_rel < 1e-6,
        format!("max relative error {worst_rel:.2e}, 20 draws x 4 schemes (tol 1e-6)"),
    );
    suite.check(
        "exact.parameter_shift",
        worst_shift < 1e-10,
        format!("max |adjoint - shift| = {worst_shift:.2e} on {shifted_slots} uncontrolled slots (tol 1e-10)"),
    );
    suite.finish();
}

#[test]
fn fisher_matrices_are_psd() {
    let mut suite = Suite::new();
    let mut asym: f64 = 0.0;
    let mut floor = f64::INFINITY;
    let mut count = 0;
    for scheme in SchemeKind::ALL {
        for mode in [FisherMode::Expected, FisherMode::Sampled { seed: 5 }] {
            let mut cfg = CapacityConfig::new(scheme, 4, 2);
            cfg.n_theta = 3;
            cfg.n_samples = 60;
            cfg.mode = mode;
            for r in fisher_reports(&cfg).unwrap() {
                asym = asym.max((&r.f - r.f.transpose()).amax());
                floor = floor.min(r.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min));
                count += 1;
            }
        }
    }
    suite.check("exact.fisher_symmetric", asym <= 1e-12, format!("max |F - F^T| = {asym:.2e} over {count} matrices (tol 1e-12)"));
    suite.check("exact.fisher_psd", floor > -1e-10, format!("smallest eigenvalue {floor:.2e} (floor -1e-10)"));
    suite.finish();
}

#[test]
fn parity_identity() {
    let mut suite = Suite::new();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let w = parity_weights(4);
    let mut worst: f64 = 0.0;
    for scheme in SchemeKind::ALL {
        let model = std_model(scheme, 2);
        let w = parity_weights(model.n_outcomes());
        let program = Program::compile(&to_deferred(&model)).unwrap();
        for _ in 0..50 {
            let (params, inst) = draw(&model, &mut rng);
            let f_int = interpret(program.forward(&params, &inst).unwrap().probs(), &w).unwrap();
            // readout parity from the explicit-measurement engine
            let probs = forward_branching(&model, &params, &inst).unwrap().distribution.into_probs();
            let zz: f64 = probs.iter().enumerate().map(|(y, p)| if (y as u32).count_ones() % 2 == 0 { *p } else { -p }).sum();
            worst = worst.max((f_int - zz).abs());
        }
    }
    suite.check(
        "exact.parity_identity",
        w == [1.0, -1.0, -1.0, 1.0] && worst <= 1e-14,
        format!("w = {w:?}, max |f_int - <Z...Z>| = {worst:.2e} (tol 1e-14)"),
    );
    suite.finish();
}

#[test]
fn dataset_invariants() {
    let mut suite = Suite::new();
    let mut problems = Vec::new();
    for seed in 0..100 {
        let ds = make_dataset(seed);
        let meta = &ds.meta;
        let mut sizes = vec![0usize; 32];
        let mut max_norm: f64 = 0.0;
        for s in &ds.samples {
            sizes[s.cluster] += 1;
            if s.label != meta.cluster_labels[s.cluster] {
                problems.push(format!("seed {seed}: label mismatch"));
            }
            let r2: f64 = s.x.iter().zip(&meta.corners[s.cluster]).map(|(x, c)| (x - c).powi(2)).sum();
            max_norm = max_norm.max(r2.sqrt());
        }
        let positive = meta.cluster_labels.iter().filter(|&&l| l == 1).count();
        let negative = meta.cluster_labels.iter().filter(|&&l| l == -1).count();
        let distinct = (0..32).all(|i| (0..i).all(|j| meta.corners[i] != meta.corners[j]));
        let train = ds.indices(Split::Train).len();
        let val = ds.indices(Split::Validation).len();
        if ds.len() != 2048 || meta.corners.len() != 32 || sizes.iter().any(|&n| n != 64) {
            problems.push(format!("seed {seed}: sizes"));
        }
        if ds.samples.iter().any(|s| s.x.len() != 8) {
            problems.push(format!("seed {seed}: dimension"));
        }
        if positive != 16 || negative != 16 {
            problems.push(format!("seed {seed}: balance {positive}/{negative}"));
        }
        if max_norm >= std::f64::consts::FRAC_PI_4 {
            problems.push(format!("seed {seed}: norm {max_norm}"));
        }
        if !distinct {
            problems.push(format!("seed {seed}: repeated corner"));
        }
        if (train, val) != (1536, 512) {
            problems.push(format!("seed {seed}: split {train}/{val}"));
        }
    }
    suite.check(
        "exact.dataset_invariants",
        problems.is_empty(),
        format!("100 seeds, violations: {}", if problems.is_empty() { "none".into() } else { problems.join("; ") }),
    );
    suite.finish();
}

// Statistical suite

const TRIALS: usize = 5;

fn accuracies(scheme: SchemeKind, mode: InterpretMode) -> Vec<f64> {
    let ds = make_dataset(0);
    let cfg = TrainConfig { trials: TRIALS, iterations: 1000, seed: 0, interpret_mode: mode, ..TrainConfig::default() };
    train(&std_model(scheme, 9), &ds, &cfg).unwrap().iter().map(|r| 100.0 * r.final_val_acc).collect()
}

/// Trained-interpret validation accuracies (percent) at L = 9.
fn trained() -> &'static [(SchemeKind, Vec<f64>)] {
    static CELL: OnceLock<Vec<(SchemeKind, Vec<f64>)>> = OnceLock::new();
    CELL.get_or_init(|| SchemeKind::ALL.iter().map(|&s| (s, accuracies(s, InterpretMode::Trained))).collect())
}

fn mean_of(rows: &[(SchemeKind, Vec<f64>)], scheme: SchemeKind) -> (f64, f64) {
    mean_std(&rows.iter().find(|(s, _)| *s == scheme).unwrap().1)
}

#[test]
fn accuracy_ordering() {
    let mut suite = Suite::new();
    let rows = trained();
    let [non, nc, cc, qc] = [Non, Nc, Cc, Qc].map(|s| mean_of(rows, s));
    let fmt = |(m, s): (f64, f64)| format!("{m:.2} +- {s:.2}");
    let line = format!("{TRIALS} trials: CC {} QC {} NC {} non {}", fmt(cc), fmt(qc), fmt(nc), fmt(non));
    suite.check("accuracy.cc", cc.0 >= 93.0, format!("CC >= 93; {line}"));
    suite.check("accuracy.qc", qc.0 >= 93.0, format!("QC >= 93; {line}"));
    suite.check("accuracy.cc_qc_gap", (cc.0 - qc.0).abs() <= 4.0, format!("|CC - QC| = {:.2} <= 4", (cc.0 - qc.0).abs()));
    suite.check("accuracy.nc_band", (83.0..=93.0).contains(&nc.0), format!("NC {:.2} in [83, 93]", nc.0));
    suite.check("accuracy.non_band", (72.0..=83.0).contains(&non.0), format!("non-distributed {:.2} in [72, 83]", non.0));
    suite.finish();
}

#[test]
fn parity_fixed_readout() {
    let mut suite = Suite::new();
    let fixed: Vec<_> = [Nc, Cc, Qc].iter().map(|&s| (s, accuracies(s, InterpretMode::ParityFixed))).collect();
    let [nc, cc, qc] = [Nc, Cc, Qc].map(|s| mean_of(&fixed, s).0);
    let cc_trained = mean_of(trained(), Cc).0;
    let drop = cc_trained - cc;
    suite.check(
        "parity_fixed.cc_drop",
        drop >= 4.0,
        format!("CC trained {cc_trained:.2} -> parity-fixed {cc:.2}, drop {drop:.2} >= 4"),
    );
    suite.check(
        "parity_fixed.ordering",
        qc >= cc && cc >= nc,
        format!("parity-fixed QC {qc:.2} >= CC {cc:.2} >= NC {nc:.2}"),
    );
    suite.finish();
}

fn ed(scheme: SchemeKind, l: usize, pooling: PoolingKind) -> (usize, usize) {
    let mut cfg = CapacityConfig::new(scheme, 4, l);
    cfg.pooling = pooling;
    cfg.n_theta = 3;
    cfg.n_samples = 200;
    let e = effective_dimension(&cfg).unwrap();
    (e.effective_dimension, e.n_params)
}

#[test]
fn effective_dimension_at_depth() {
    let mut suite = Suite::new();
    let (nc, d_nc) = ed(Nc, 30, PoolingKind::Standard);
    let (cc, d_cc) = ed(Cc, 30, PoolingKind::Standard);
    suite.check(
        "effdim.l30",
        cc > nc && (200..=300).contains(&nc) && (200..=300).contains(&cc),
        format!("L=30: CC {cc}/{d_cc} > NC {nc}/{d_nc}, both in [200, 300]"),
    );

    let depths = [1, 2, 3, 4, 6, 8, 12, 16, 30];
    let mut lines = Vec::new();
    let mut monotone = true;
    for scheme in [Nc, Cc, Qc] {
        let eds: Vec<usize> = depths.iter().map(|&l| ed(scheme, l, PoolingKind::Standard).0).collect();
        monotone &= eds.windows(2).all(|w| w[0] <= w[1]);
        lines.push(format!("{scheme} {eds:?}"));
    }
    suite.check("effdim.monotone", monotone, format!("L = {depths:?}: {}", lines.join(", ")));
    suite.finish();
}

#[test]
fn dumb_pooling_equality() {
    let mut suite = Suite::new();
    let mut pairs = Vec::new();
    let mut mismatched = Vec::new();
    for l in 1..=8 {
        let nc = ed(Nc, l, PoolingKind::Dumb).0;
        let qc = ed(Qc, l, PoolingKind::Dumb).0;
        pairs.push(format!("L{l} {nc}/{qc}"));
        if nc != qc {
            mismatched.push(l);
        }
    }
    suite.check(
        "dumb_pooling.equality",
        mismatched.is_empty(),
        format!("NC/QC: {}; unequal at L = {mismatched:?}", pairs.join(" ")),
    );
    suite.finish();
}

#[test]
fn spectrum_spread() {
    let mut suite = Suite::new();
    let sigma = |scheme| {
        let mut cfg = CapacityConfig::new(scheme, 4, 4);
        cfg.n_theta = 200;
        cfg.n_samples = 200;
        spectrum_statistics(&cfg).unwrap().sigma_log
    };
    let [nc, cc, qc] = [Nc, Cc, Qc].map(sigma);
    suite.check("spectrum.ordering", qc < nc && nc < cc, format!("sigma_log QC {qc:.3} < NC {nc:.3} < CC {cc:.3}"));
    let within = [(qc, 1.056), (nc, 1.383), (cc, 2.136)].iter().all(|(v, t)| (v - t).abs() <= 0.5);
    suite.check(
        "spectrum.values",
        within,
        format!("QC {qc:.3} vs 1.056, NC {nc:.3} vs 1.383, CC {cc:.3} vs 2.136 (tol 0.5)"),
    );
    suite.finish();
}
