//! Class-conditional Gaussian-blob images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatasetSplit;
use crate::error::{Error, Result};
use crate::models::Geometry;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub classes: usize,
    pub per_class: usize,
    pub geometry: Geometry,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

/// Blob centres sit on a circle around the image centre, one per class.
fn template(class: usize, classes: usize, g: Geometry) -> Vec<f64> {
    let (h, w) = (g.height as f64, g.width as f64);
    let angle = std::f64::consts::TAU * class as f64 / classes as f64;
    let radius = 0.3 * h.min(w);
    let (cy, cx) = ((h - 1.0) / 2.0 + radius * angle.sin(), (w - 1.0) / 2.0 + radius * angle.cos());
    let sigma = (h.min(w) / 6.0).max(0.5);
    let mut out = Vec::with_capacity(g.sample_len());
    for c in 0..g.channels {
        let gain = 1.0 - 0.5 * c as f64 / g.channels as f64;
        for y in 0..g.height {
            for x in 0..g.width {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                out.push(gain * (-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    out
}

/// Samples are interleaved by class (`label = index % classes`), so any
/// prefix is close to balanced.
pub fn synth_dataset(p: &SynthParams) -> Result<DatasetSplit> {
    if p.classes < 2 {
        return Err(Error::DegenerateClassification(p.classes));
    }
    if p.per_class == 0 || p.geometry.sample_len() == 0 {
        return Err(Error::Config("synthetic dataset needs samples and pixels".into()));
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and non-negative, got {}", p.noise)));
    }
    let templates: Vec<Vec<f64>> = (0..p.classes).map(|k| template(k, p.classes, p.geometry)).collect();
    let n = p.classes * p.per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let normal = Normal::new(0.0, p.noise).expect("validated");
    let mut data = Vec::with_capacity(n * p.geometry.sample_len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % p.classes;
        labels.push(k);
        if p.noise > 0.0 {
            data.extend(templates[k].iter().map(|&v| v + normal.sample(&mut rng)));
        } else {
            data.extend_from_slice(&templates[k]);
        }
    }
    let g = p.geometry;
    DatasetSplit::new(Tensor::new(vec![n, g.channels, g.height, g.width], data)?, labels, p.classes)
}
