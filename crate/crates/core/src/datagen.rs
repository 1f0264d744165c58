//! Synthetic cluster datasets and Haar capacity inputs.
//!
//! Points are drawn uniformly from a ball, grouped into clusters, and each
//! cluster is translated to a corner of the hypercube `{-r, +r}^dim`. Half of
//! the clusters carry label +1, the other half -1.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::circuits::Instance;
use crate::error::{Error, Result};
use crate::qstate::haar_state;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Every cluster contributes the same share of training instances.
    Stratified,
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub dim: usize,
    pub n_clusters: usize,
    pub cluster_size: usize,
    pub radius: f64,
    pub n_train: usize,
    pub split_mode: SplitMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            n_clusters: 32,
            cluster_size: 64,
            radius: std::f64::consts::FRAC_PI_4,
            n_train: 1536,
            split_mode: SplitMode::Stratified,
        }
    }
}

impl DatasetConfig {
    pub fn n_instances(&self) -> usize {
        self.n_clusters * self.cluster_size
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.dim == 0 || self.dim > 16 {
            return bad("dimension must be between 1 and 16");
        }
        if self.n_clusters == 0 || !self.n_clusters.is_multiple_of(2) || self.n_clusters > 1 << self.dim {
            return bad("cluster count must be even and at most 2^dim");
        }
        if self.cluster_size == 0 || !(self.radius > 0.0) {
            return bad("cluster size and radius must be positive");
        }
        if self.n_train > self.n_instances() {
            return bad("more training instances than instances");
        }
        if self.split_mode == SplitMode::Stratified && !self.n_train.is_multiple_of(self.n_clusters) {
            return bad("stratified split needs a training size divisible by the cluster count");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: i8,
    pub cluster: usize,
    pub split: Split,
}

/// Sidecar metadata stored next to the CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub config: DatasetConfig,
    pub corners: Vec<Vec<f64>>,
    pub cluster_labels: Vec<i8>,
    pub rho: Vec<f64>,
    pub rho_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

/// Independent random streams derived from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `n` i.i.d. points uniform in the open ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(n: usize, dim: usize, radius: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
        let p: Vec<f64> = g.iter().map(|v| v * r / norm).collect();
        if p.iter().map(|v| v * v).sum::<f64>().sqrt() < radius {
            out.push(p);
        }
    }
    out
}

/// Pearson correlation with population normalization.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.is_empty() {
        return Err(Error::Empty("correlation input"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    if sx == 0.0 || sy == 0.0 {
        return Err(Error::InvalidArgument("correlation with a constant column is undefined".into()));
    }
    Ok(cov / (sx * sy))
}

pub fn make_dataset(seed: u64) -> SyntheticDataset {
    make_dataset_with(&DatasetConfig::default(), seed).expect("default configuration is valid")
}

pub fn make_dataset_with(config: &DatasetConfig, seed: u64) -> Result<SyntheticDataset> {
    config.check()?;
    let (dim, r) = (config.dim, config.radius);
    let points = sample_ball(config.n_instances(), dim, r, &mut stream(seed, 0));
    let corners: Vec<Vec<f64>> = index::sample(&mut stream(seed, 1), 1 << dim, config.n_clusters)
        .into_iter()
        .map(|code| (0..dim).map(|i| if code >> i & 1 == 1 { r } else { -r }).collect())
        .collect();
    let mut cluster_labels: Vec<i8> = (0..config.n_clusters).map(|k| if k < config.n_clusters / 2 { 1 } else { -1 }).collect();
    cluster_labels.shuffle(&mut stream(seed, 2));

    let mut samples: Vec<Sample> = points
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let cluster = i / config.cluster_size;
            let x = p.iter().zip(&corners[cluster]).map(|(a, c)| a + c).collect();
            Sample { x, label: cluster_labels[cluster], cluster, split: Split::Validation }
        })
        .collect();
    assign_split(&mut samples, config, &mut stream(seed, 3));

    let labels: Vec<f64> = samples.iter().map(|s| s.label as f64).collect();
    let rho = (0..dim)
        .map(|i| pearson(&samples.iter().map(|s| s.x[i]).collect::<Vec<_>>(), &labels))
        .collect::<Result<Vec<_>>>()?;
    let rho_max = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SyntheticDataset {
        samples,
        meta: DatasetMeta { seed, config: config.clone(), corners, cluster_labels, rho, rho_max },
    })
}

fn assign_split(samples: &mut [Sample], config: &DatasetConfig, rng: &mut ChaCha8Rng) {
    match config.split_mode {
        SplitMode::Stratified => {
            let per_cluster = config.n_train / config.n_clusters;
            for chunk in samples.chunks_mut(config.cluster_size) {
                let mut order: Vec<usize> = (0..chunk.len()).collect();
                order.shuffle(rng);
                for &i in &order[..per_cluster] {
                    chunk[i].split = Split::Train;
                }
            }
        }
        SplitMode::Flat => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(rng);
            for &i in &order[..config.n_train] {
                samples[i].split = Split::Train;
            }
        }
    }
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.samples.iter().enumerate().filter(|(_, s)| s.split == split).map(|(i, _)| i).collect()
    }

    /// `(instance, label)` pairs of one split, in dataset order.
    pub fn labeled(&self, split: Split) -> Vec<(Instance, f64)> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| (Instance::Attributes(s.x.clone()), s.label as f64))
            .collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = (1..=self.meta.config.dim).map(|i| format!("x{i}")).collect();
        h.extend(["label", "cluster", "split"].map(String::from));
        h
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header()).map_err(csv_err)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            rec.push(s.label.to_string());
            rec.push(s.cluster.to_string());
            rec.push(s.split.as_str().to_string());
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `path` (CSV) and its JSON sidecar; returns the sidecar path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf)?;
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(side)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let dim = meta.config.dim;
        let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut samples = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != dim + 3 {
                return Err(Error::InvalidArgument(format!("CSV row with {} fields, expected {}", rec.len(), dim + 3)));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::InvalidArgument(format!("bad number '{}'", &rec[i])))
            };
            let x = (0..dim).map(num).collect::<Result<Vec<_>>>()?;
            let label: i8 = rec[dim].parse().map_err(|_| Error::InvalidArgument(format!("bad label '{}'", &rec[dim])))?;
            let cluster: usize =
                rec[dim + 1].parse().map_err(|_| Error::InvalidArgument(format!("bad cluster '{}'", &rec[dim + 1])))?;
            let split = match &rec[dim + 2] {
                "train" => Split::Train,
                "validation" => Split::Validation,
                other => return Err(Error::InvalidArgument(format!("bad split '{other}'"))),
            };
            samples.push(Sample { x, label, cluster, split });
        }
        Ok(Self { samples, meta })
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("CSV: {e}"))
}

/// `n` capacity inputs, one Haar-random state per QPU.
pub fn haar_dataset<R: Rng + ?Sized>(n: usize, qubits_per_qpu: usize, n_qpus: usize, rng: &mut R) -> Result<Vec<Instance>> {
    (0..n)
        .map(|_| Ok(Instance::Haar((0..n_qpus).map(|_| haar_state(qubits_per_qpu, rng)).collect::<Result<_>>()?)))
        .collect()
}
