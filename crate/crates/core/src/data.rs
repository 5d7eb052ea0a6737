//! Datasets and deterministic batching.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IdxErrorKind, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Transformation applied to the raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Bytes divided by 255.
    UnitInterval,
    /// Per-feature `(x - mean) / std`.
    Standardized { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(name: &str, inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.ndim() < 2 || inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "inputs {:?} do not pair with {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset {name} is empty")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside [0, {classes})")));
        }
        inputs.ensure_finite("dataset inputs")?;
        Ok(Self { name: name.to_string(), inputs, labels, classes, normalization: Normalization::None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of one example.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Inputs and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.inputs.gather_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn select(&self, indices: &[usize], name: &str) -> Result<Dataset> {
        let (inputs, labels) = self.batch(indices)?;
        let mut ds = Dataset::new(name, inputs, labels, self.classes)?;
        ds.normalization = self.normalization.clone();
        Ok(ds)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        self.labels.iter().for_each(|&l| h[l] += 1);
        h
    }

    /// Shuffles with `seed` and splits into the first `n_first` examples and the rest.
    pub fn split(&self, n_first: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n_first == 0 || n_first >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {n_first} must lie in (0, {})",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = self.select(&order[..n_first], &format!("{}[..{n_first}]", self.name))?;
        let b = self.select(&order[n_first..], &format!("{}[{n_first}..]", self.name))?;
        Ok((a, b))
    }

    /// Per-feature standardization using this dataset's statistics.
    pub fn standardize(&mut self) {
        let n = self.len();
        let f = self.inputs.row_len();
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for row in self.inputs.data().chunks_exact(f) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n as f64);
        }
        for row in self.inputs.data().chunks_exact(f) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m) / n as f64;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        for row in self.inputs.data_mut().chunks_exact_mut(f) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / s;
            }
        }
        self.normalization = Normalization::Standardized { mean, std };
    }
}

/// Seeded sample of `n` examples without replacement.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > ds.len() {
        return Err(Error::InvalidArgument(format!("subset size {n} outside [1, {}]", ds.len())));
    }
    let picked = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), ds.len(), n).into_vec();
    ds.select(&picked, &format!("{}[subset {n} seed {seed}]", ds.name))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxFile {
    dims: Vec<usize>,
    /// Offset of the first payload byte.
    payload: usize,
    bytes: Vec<u8>,
}

fn parse_idx(path: &Path, magic: u32) -> Result<IdxFile> {
    let bytes = read_maybe_gz(path)?;
    let fail = |kind, offset: usize| Error::Idx { path: path.display().to_string(), kind, offset: offset as u64 };
    let read_u32 = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| {
                fail(IdxErrorKind::Truncated { needed: (at + 4) as u64, available: bytes.len() as u64 }, at)
            })
    };
    let found = read_u32(0)?;
    if found != magic {
        return Err(fail(IdxErrorKind::BadMagic { expected: magic, found }, 0));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| read_u32(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let payload = 4 + 4 * ndims;
    let needed = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(payload))
        .ok_or_else(|| fail(IdxErrorKind::BadDimensions(format!("{dims:?} overflow")), 4))?;
    if bytes.len() < needed {
        return Err(fail(
            IdxErrorKind::Truncated { needed: needed as u64, available: bytes.len() as u64 },
            bytes.len(),
        ));
    }
    Ok(IdxFile { dims, payload, bytes })
}

/// Reads an IDX image/label pair (optionally gzip-compressed, by `.gz`
/// extension). Pixels are scaled to `[0, 1]`; inputs have shape `(N, 1, H, W)`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx(images_path, IDX_IMAGES_MAGIC)?;
    let labels = parse_idx(labels_path, IDX_LABELS_MAGIC)?;
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Idx {
            path: labels_path.display().to_string(),
            kind: IdxErrorKind::CountMismatch { images: n as u64, labels: labels.dims[0] as u64 },
            offset: 4,
        });
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Idx {
            path: images_path.display().to_string(),
            kind: IdxErrorKind::BadDimensions(format!("{n} x {h} x {w}")),
            offset: 4,
        });
    }
    let pixels = images.bytes[images.payload..images.payload + n * h * w]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let label_bytes = &labels.bytes[labels.payload..labels.payload + n];
    let label_vec: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = label_vec.iter().max().map_or(0, |m| m + 1).max(10);
    let inputs = Tensor::new(vec![n, 1, h, w], pixels)?;
    let name = images_path.file_name().map_or("idx".into(), |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::new(&name, inputs, label_vec, classes)?;
    ds.normalization = Normalization::UnitInterval;
    Ok(ds)
}

/// Loads `images-idx3-ubyte[.gz]` and `labels-idx1-ubyte[.gz]` from `dir`.
pub fn load_idx_dir(dir: &Path) -> Result<Dataset> {
    let find = |stem: &str| {
        [dir.join(format!("{stem}.gz")), dir.join(stem)]
            .into_iter()
            .find(|p| p.exists())
            .ok_or_else(|| Error::InvalidArgument(format!("no {stem}[.gz] in {}", dir.display())))
    };
    load_idx(&find("images-idx3-ubyte")?, &find("labels-idx1-ubyte")?)
}

/// Gaussian blobs (unit variance per coordinate) around seeded random centers
/// that are pairwise at least `separation` apart.
pub fn synth_blobs(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty blob dataset ({classes} classes x {per_class} per class, dim {dim})"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation {separation} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut half_width = separation * classes as f64;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centers.len() < classes {
        let box_dist = Uniform::new_inclusive(-half_width, half_width).expect("finite box");
        let mut placed = false;
        for _ in 0..1000 {
            let c: Vec<f64> = (0..dim).map(|_| box_dist.sample(&mut rng)).collect();
            let far = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if far {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            half_width *= 2.0;
        }
    }
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        for &c in &centers[k] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(c + z);
        }
        labels.push(k);
    }
    Dataset::new(&format!("blobs-{classes}x{per_class}-d{dim}"), Tensor::new(vec![n, dim], data)?, labels, classes)
}

/// Deterministic epoch permutations and minibatch slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub examples: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(examples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > examples {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} must lie in [1, {examples}]"
            )));
        }
        Ok(Self { examples, batch_size, seed })
    }

    /// Permutation of `0..examples` for `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.examples).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Full training batches per epoch; the incomplete tail is dropped.
    pub fn train_batches_per_epoch(&self) -> usize {
        self.examples / self.batch_size
    }

    pub fn train_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let order = self.epoch_order(epoch);
        order.chunks_exact(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Indices of the minibatch used at global training `step`.
    pub fn batch_for_step(&self, step: u64) -> Vec<usize> {
        let per_epoch = self.train_batches_per_epoch() as u64;
        let (epoch, k) = (step / per_epoch, (step % per_epoch) as usize);
        let order = self.epoch_order(epoch);
        order[k * self.batch_size..(k + 1) * self.batch_size].to_vec()
    }

    /// Sequential evaluation batches over `0..examples`, keeping the tail.
    pub fn eval_batches(&self) -> Vec<Vec<usize>> {
        (0..self.examples)
            .collect::<Vec<_>>()
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Caches the current epoch's permutation while stepping through training.
#[derive(Debug, Clone)]
pub struct BatchStream {
    plan: BatchPlan,
    epoch: u64,
    order: Vec<usize>,
}

impl BatchStream {
    pub fn new(plan: BatchPlan) -> Self {
        Self { order: plan.epoch_order(0), plan, epoch: 0 }
    }

    pub fn batch_for_step(&mut self, step: u64) -> &[usize] {
        let per_epoch = self.plan.train_batches_per_epoch() as u64;
        let (epoch, k) = (step / per_epoch, (step % per_epoch) as usize);
        if epoch != self.epoch {
            self.epoch = epoch;
            self.order = self.plan.epoch_order(epoch);
        }
        let b = self.plan.batch_size;
        &self.order[k * b..(k + 1) * b]
    }
}
