//! Synthetic federated datasets with label skew and per-client covariate shift.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregate::sample_gamma;
use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix, Reader, Targets};
use crate::rng::{stream, Phase, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Gaussian class clusters; targets are class indices.
    Classification,
    /// 1-D signals with one raised segment; targets are binary masks.
    ToySegmentation,
}

/// Per-feature affine map `x -> scale * x + offset` applied to one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineShift {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineShift {
    pub fn identity(dim: usize) -> Self {
        AffineShift {
            scale: vec![1.0; dim],
            offset: vec![0.0; dim],
        }
    }

    /// Scales `exp(N(0, scale_std^2))` and offsets `N(0, offset_std^2)`, one
    /// shift per client, drawn from a stream keyed by `seed`.
    pub fn random(
        clients: usize,
        dim: usize,
        scale_std: f64,
        offset_std: f64,
        seed: u64,
    ) -> Vec<Self> {
        (0..clients)
            .map(|k| {
                let mut rng = stream(seed, 0, k as u64, Phase::ShiftParams);
                let scale = (0..dim)
                    .map(|_| (scale_std * rng.sample::<f64, _>(StandardNormal)).exp())
                    .collect();
                let offset = (0..dim)
                    .map(|_| offset_std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                AffineShift { scale, offset }
            })
            .collect()
    }

    fn apply(&self, x: &mut [f64]) {
        for ((v, s), o) in x.iter_mut().zip(&self.scale).zip(&self.offset) {
            *v = s * *v + o;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub task: Task,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Mean number of samples per client.
    pub samples_per_client: usize,
    /// Relative client sizes; equal sizes when absent.
    pub client_weights: Option<Vec<f64>>,
    pub num_clients: usize,
    /// Concentration of the symmetric Dirichlet over class proportions.
    pub skew: f64,
    pub shifts: Vec<AffineShift>,
    pub split: SplitFractions,
    /// Spread of class means (classification) or segment amplitude (segmentation).
    pub class_separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Classification defaults: identity shifts, equal sizes, 60/20/20 split.
    pub fn classification(
        num_clients: usize,
        num_classes: usize,
        feature_dim: usize,
        seed: u64,
    ) -> Self {
        DatasetSpec {
            task: Task::Classification,
            num_classes,
            feature_dim,
            samples_per_client: 200,
            client_weights: None,
            num_clients,
            skew: 1.0,
            shifts: vec![AffineShift::identity(feature_dim); num_clients],
            split: SplitFractions::default(),
            class_separation: 2.0,
            noise: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let SplitFractions { train, val, test } = self.split;
        if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split fractions must be positive and sum to 1",
            ));
        }
        if self.num_clients < 2 {
            return Err(Error::config("at least two clients are required"));
        }
        if !(self.skew > 0.0 && self.skew.is_finite()) {
            return Err(Error::config("skew must be a positive finite number"));
        }
        if self.num_classes < 2 || self.feature_dim == 0 {
            return Err(Error::config("need at least two classes and one feature"));
        }
        if self.shifts.len() != self.num_clients
            || self
                .shifts
                .iter()
                .any(|s| s.scale.len() != self.feature_dim || s.offset.len() != self.feature_dim)
        {
            return Err(Error::config(
                "one affine shift of feature_dim entries per client required",
            ));
        }
        if let Some(w) = &self.client_weights {
            if w.len() != self.num_clients || w.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::config(
                    "client_weights needs one positive entry per client",
                ));
            }
        }
        if !(self.noise >= 0.0) || !self.class_separation.is_finite() {
            return Err(Error::config("noise must be non-negative"));
        }
        for (k, n) in self.client_totals().into_iter().enumerate() {
            self.split_counts(n)
                .map_err(|e| Error::config(format!("client {k}: {e}")))?;
        }
        Ok(())
    }

    /// Total samples per client before splitting.
    pub fn client_totals(&self) -> Vec<usize> {
        let k = self.num_clients;
        match &self.client_weights {
            None => vec![self.samples_per_client; k],
            Some(w) => {
                let sum: f64 = w.iter().sum();
                let total = (self.samples_per_client * k) as f64;
                w.iter()
                    .map(|v| (total * v / sum).round() as usize)
                    .collect()
            }
        }
    }

    fn split_counts(&self, n: usize) -> std::result::Result<(usize, usize, usize), String> {
        let val = (n as f64 * self.split.val).round() as usize;
        let test = (n as f64 * self.split.test).round() as usize;
        if val == 0 || test == 0 || val + test >= n {
            return Err(format!("{n} samples leave an empty split"));
        }
        Ok((n - val - test, val, test))
    }
}

/// One client's data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
}

impl ClientShard {
    /// `n_k`: number of training samples.
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn n_total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

fn class_proportions(classes: usize, skew: f64, rng: &mut SimRng) -> Vec<f64> {
    let z: Vec<f64> = (0..classes).map(|_| sample_gamma(skew, rng)).collect();
    let sum: f64 = z.iter().sum();
    if sum > 0.0 {
        z.iter().map(|v| v / sum).collect()
    } else {
        // every draw underflowed: put all mass on one class
        let mut p = vec![0.0; classes];
        p[rng.gen_range(0..classes)] = 1.0;
        p
    }
}

fn draw_class(props: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, p) in props.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    props.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Generates `K` shards; fully determined by the spec (including its seed).
pub fn generate(spec: &DatasetSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let mut mean_rng = stream(spec.seed, 0, 0, Phase::DataMeans);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..dim)
                .map(|_| spec.class_separation * mean_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    spec.client_totals()
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            let mut rng = stream(spec.seed, 0, k as u64, Phase::DataClient);
            let props = class_proportions(spec.num_classes, spec.skew, &mut rng);
            let mut inputs = Vec::with_capacity(n * dim);
            let mut classes = Vec::with_capacity(n);
            let mut masks = Vec::new();
            for _ in 0..n {
                let c = draw_class(&props, &mut rng);
                let mut x: Vec<f64> = match spec.task {
                    Task::Classification => means[c]
                        .iter()
                        .map(|m| m + spec.noise * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    Task::ToySegmentation => {
                        let mask = segment_mask(dim, c, spec.num_classes, &mut rng);
                        let x = mask
                            .iter()
                            .map(|m| {
                                spec.class_separation * m
                                    + spec.noise * rng.sample::<f64, _>(StandardNormal)
                            })
                            .collect();
                        masks.extend(mask);
                        x
                    }
                };
                spec.shifts[k].apply(&mut x);
                inputs.extend(x);
                classes.push(c);
            }
            let targets = match spec.task {
                Task::Classification => Targets::Classes(classes),
                Task::ToySegmentation => Targets::Masks(Matrix::from_vec(n, dim, masks)?),
            };
            let all = Batch::new(Matrix::from_vec(n, dim, inputs)?, targets)?;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (n_train, n_val, _) = spec.split_counts(n).map_err(Error::Config)?;
            Ok(ClientShard {
                client_id: k,
                train: all.select(&order[..n_train]),
                val: all.select(&order[n_train..n_train + n_val]),
                test: all.select(&order[n_train + n_val..]),
            })
        })
        .collect()
}

/// Binary mask with one contiguous segment whose length grows with the class.
fn segment_mask(len: usize, class: usize, classes: usize, rng: &mut SimRng) -> Vec<f64> {
    let seg =
        ((len as f64 * 0.7 * (class + 1) as f64 / classes as f64).round() as usize).clamp(1, len);
    let start = rng.gen_range(0..=len - seg);
    (0..len)
        .map(|i| {
            if i >= start && i < start + seg {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Training sizes `(n_1..n_K)` in client order and their total `n`.
pub fn client_sizes(shards: &[ClientShard]) -> (Vec<usize>, usize) {
    let sizes: Vec<usize> = shards.iter().map(ClientShard::n_train).collect();
    let n = sizes.iter().sum();
    (sizes, n)
}

/// `n_k / n` for each client.
pub fn size_fractions(sizes: &[usize]) -> Vec<f64> {
    let n: usize = sizes.iter().sum();
    sizes.iter().map(|&s| s as f64 / n as f64).collect()
}

/// Empirical class histogram of a shard's training split, normalized.
pub fn class_histogram(batch: &Batch, classes: usize) -> Vec<f64> {
    let mut h = vec![0.0; classes];
    if let Targets::Classes(c) = &batch.targets {
        for &ci in c {
            h[ci] += 1.0;
        }
        let n = c.len().max(1) as f64;
        h.iter_mut().for_each(|v| *v /= n);
    }
    h
}

const SHARD_MAGIC: &[u8; 4] = b"FASH";
const SHARD_VERSION: u32 = 1;

/// Binary shard file:
///
/// ```text
/// "FASH" | u32 version | u64 client_id | u8 task (0 classes, 1 masks)
/// u64 feature_dim | u64 target_width | u64 n_train | u64 n_val | u64 n_test
/// per split (train, val, test): inputs row-major f64, then targets
/// row-major f64 (class index as f64 for classification)
/// ```
pub fn shard_to_bytes(shard: &ClientShard) -> Vec<u8> {
    let dim = shard.train.inputs.cols();
    let (task, width) = match &shard.train.targets {
        Targets::Classes(_) => (0u8, 1usize),
        Targets::Masks(m) => (1u8, m.cols()),
    };
    let mut out = Vec::new();
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&(shard.client_id as u64).to_le_bytes());
    out.push(task);
    for v in [
        dim,
        width,
        shard.train.len(),
        shard.val.len(),
        shard.test.len(),
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for split in [&shard.train, &shard.val, &shard.test] {
        for v in split.inputs.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &split.targets {
            Targets::Classes(c) => c
                .iter()
                .for_each(|&ci| out.extend_from_slice(&(ci as f64).to_le_bytes())),
            Targets::Masks(m) => m
                .data()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}

pub fn shard_from_bytes(bytes: &[u8]) -> Result<ClientShard> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != SHARD_MAGIC {
        return Err(Error::config("not a shard file (bad magic)"));
    }
    if r.u32()? != SHARD_VERSION {
        return Err(Error::config("unsupported shard version"));
    }
    let client_id = r.u64()? as usize;
    let task = r.take(1)?[0];
    let dim = r.u64()? as usize;
    let width = r.u64()? as usize;
    let counts = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
    let mut splits = Vec::with_capacity(3);
    for rows in counts {
        let inputs = (0..rows * dim)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        let raw = (0..rows * width)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        let targets = match task {
            0 => Targets::Classes(raw.iter().map(|&v| v as usize).collect()),
            1 => Targets::Masks(Matrix::from_vec(rows, width, raw)?),
            t => return Err(Error::config(format!("unknown shard task tag {t}"))),
        };
        splits.push(Batch::new(Matrix::from_vec(rows, dim, inputs)?, targets)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::config("trailing bytes in shard file"));
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(ClientShard {
        client_id,
        train,
        val,
        test,
    })
}

fn shard_path(dir: &Path, client: usize) -> PathBuf {
    dir.join(format!("client_{client}.shard"))
}

/// Writes `client_<id>.shard` for every shard into `dir`.
pub fn dump_shards(dir: &Path, shards: &[ClientShard]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in shards {
        let path = shard_path(dir, s.client_id);
        fs::write(&path, shard_to_bytes(s)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_shards(dir: &Path, clients: usize) -> Result<Vec<ClientShard>> {
    (0..clients)
        .map(|k| {
            let path = shard_path(dir, k);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            shard_from_bytes(&bytes).map_err(|e| Error::Format {
                path: path.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}
