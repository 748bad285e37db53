//! Datasets: IDX ingestion, synthetic generation, normalization, batching.

mod idx;
mod synth;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx};
pub use synth::{synth_dataset, SynthParams};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{derive_seed, Geometry};
use crate::tensor::Tensor;
use crate::weakroute::TargetBatch;

/// Where a split's pixel statistics came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    /// Normalized with statistics computed on this split.
    OwnStats,
    /// Normalized with statistics supplied by the caller (training split).
    SuppliedStats,
}

/// Labelled images `[n×c×h×w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    provenance: Provenance,
}

impl DatasetSplit {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::dim("dataset images", s, &[0, 0, 0, 0]));
        }
        if s[0] != labels.len() {
            return Err(Error::Consistency(format!("{} images but {} labels", s[0], labels.len())));
        }
        if labels.is_empty() {
            return Err(Error::Consistency("empty dataset".into()));
        }
        if classes < 2 {
            return Err(Error::DegenerateClassification(classes));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Consistency(format!("label {y} at index {i} is outside [0, {classes})")));
        }
        Ok(Self {
            images,
            labels,
            classes,
            provenance: Provenance::Raw,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn geometry(&self) -> Geometry {
        let s = self.images.shape();
        Geometry::new(s[1], s[2], s[3])
    }

    /// The first `n` samples (all of them when `n >= len`).
    pub fn take(&self, n: usize) -> DatasetSplit {
        let n = n.min(self.len()).max(1);
        let idx: Vec<usize> = (0..n).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> DatasetSplit {
        DatasetSplit {
            images: self.images.gather_leading(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance,
        }
    }
}

/// Per-channel pixel statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn compute(split: &DatasetSplit) -> Result<Self> {
        let g = split.geometry();
        let plane = g.height * g.width;
        let data = split.images.data();
        let mut mean = Vec::with_capacity(g.channels);
        let mut std = Vec::with_capacity(g.channels);
        for c in 0..g.channels {
            let values = || {
                (0..split.len()).flat_map(move |s| {
                    let base = (s * g.channels + c) * plane;
                    data[base..base + plane].iter().copied()
                })
            };
            let n = (split.len() * plane) as f64;
            let m = values().sum::<f64>() / n;
            let var = values().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > 1e-12) {
                return Err(Error::DegenerateData(format!(
                    "channel {c} has zero variance (all pixels equal {m})"
                )));
            }
            mean.push(m);
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    fn apply(&self, images: &mut Tensor) -> Result<()> {
        let s = images.shape().to_vec();
        if s[1] != self.mean.len() || self.std.len() != self.mean.len() {
            return Err(Error::dim("normalization", &s, &[self.mean.len()]));
        }
        if let Some(sd) = self.std.iter().find(|&&sd| !(sd > 0.0)) {
            return Err(Error::DegenerateData(format!("non-positive std {sd}")));
        }
        let plane = s[2] * s[3];
        for (k, chunk) in images.data_mut().chunks_mut(plane).enumerate() {
            let c = k % s[1];
            let (m, sd) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / sd);
        }
        Ok(())
    }
}

/// Zero-mean, unit-variance scaling per channel.
///
/// Without `stats`, statistics are computed from `split` itself; with them
/// (test splits) the supplied training statistics are applied and `split`'s
/// own statistics are never read. Normalizing an already normalized split is
/// rejected.
pub fn normalize(split: &DatasetSplit, stats: Option<&NormalizationStats>) -> Result<(DatasetSplit, NormalizationStats)> {
    if split.provenance != Provenance::Raw {
        return Err(Error::Contract(format!("split is already normalized ({:?})", split.provenance)));
    }
    let (stats, provenance) = match stats {
        Some(s) => (s.clone(), Provenance::SuppliedStats),
        None => (NormalizationStats::compute(split)?, Provenance::OwnStats),
    };
    let mut out = split.clone();
    stats.apply(&mut out.images)?;
    out.provenance = provenance;
    Ok((out, stats))
}

/// One mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub target: TargetBatch,
    /// Sample indices into the source split.
    pub indices: Vec<usize>,
}

/// Sample order for `epoch`: identity, or a shuffle seeded by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
        order.shuffle(&mut rng);
    }
    order
}

/// Mini-batches over `split`; the last batch may be short.
pub fn batches(
    split: &DatasetSplit,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let order = epoch_order(split.len(), seed, epoch, shuffle);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |indices| {
        let part = split.select(&indices);
        Batch {
            images: part.images,
            target: TargetBatch::from_labels(part.labels, split.classes).expect("labels validated on load"),
            indices,
        }
    }))
}
