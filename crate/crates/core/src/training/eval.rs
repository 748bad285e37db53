//! Frozen-parameter evaluation under the inference protocols.

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::models::MultiPathModel;
use crate::par;
use crate::weakroute::{argmax_rows, mean_inference, strong_inference, LogProbMatrix};

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Strong,
    Mean,
    PerPathway,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Strong => "strong",
            Protocol::Mean => "mean",
            Protocol::PerPathway => "per_pathway",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "strong" => Ok(Protocol::Strong),
            "mean" => Ok(Protocol::Mean),
            "per_pathway" => Ok(Protocol::PerPathway),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?} (expected strong, mean or per-pathway)"
            ))),
        }
    }
}

/// Predicted labels of every protocol, all from one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predictions {
    pub strong: Vec<usize>,
    pub mean: Vec<usize>,
    /// `per_pathway[j]` holds pathway `j`'s standalone predictions.
    pub per_pathway: Vec<Vec<usize>>,
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.strong.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strong.is_empty()
    }

    pub fn accuracy(&self, protocol: Protocol, truth: &[usize]) -> Result<Evaluation> {
        if truth.len() != self.len() {
            return Err(Error::Consistency(format!("{} predictions for {} labels", self.len(), truth.len())));
        }
        let per: Vec<f64> = self.per_pathway.iter().map(|p| accuracy(p, truth)).collect();
        let (acc, per_pathway) = match protocol {
            Protocol::Strong => (accuracy(&self.strong, truth), None),
            Protocol::Mean => (accuracy(&self.mean, truth), None),
            Protocol::PerPathway => (per.iter().copied().fold(f64::NAN, f64::max), Some(per)),
        };
        Ok(Evaluation {
            protocol,
            accuracy: acc,
            n: truth.len(),
            per_pathway,
        })
    }
}

/// Accuracy under one protocol. For [`Protocol::PerPathway`], `accuracy`
/// is the best single pathway.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub protocol: Protocol,
    pub accuracy: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_pathway: Option<Vec<f64>>,
}

/// Runs `model` over `split` in parallel batches.
pub fn predict(model: &MultiPathModel, split: &DatasetSplit) -> Result<Predictions> {
    if split.geometry() != model.geometry() {
        return Err(Error::Consistency(format!(
            "dataset geometry {:?} does not match model geometry {:?}",
            split.geometry(),
            model.geometry()
        )));
    }
    if split.classes() != model.classes() {
        return Err(Error::Consistency(format!(
            "dataset has {} classes, model has {}",
            split.classes(),
            model.classes()
        )));
    }
    let n = split.len();
    let chunks = n.div_ceil(EVAL_BATCH);
    let work = n * model.param_count();
    let parts = par::map_range(chunks, work, |k| -> Result<Predictions> {
        let idx: Vec<usize> = (k * EVAL_BATCH..((k + 1) * EVAL_BATCH).min(n)).collect();
        let images = split.images().gather_leading(&idx);
        let logits = model.forward_all(&images)?;
        let lp = LogProbMatrix::from_logits(&logits)?;
        Ok(Predictions {
            strong: strong_inference(&lp).predictions(),
            mean: mean_inference(&lp).predictions(),
            per_pathway: logits.iter().map(argmax_rows).collect(),
        })
    });
    let mut out = Predictions {
        strong: Vec::with_capacity(n),
        mean: Vec::with_capacity(n),
        per_pathway: vec![Vec::with_capacity(n); model.pathways()],
    };
    for part in parts {
        let part = part?;
        out.strong.extend(part.strong);
        out.mean.extend(part.mean);
        for (dst, src) in out.per_pathway.iter_mut().zip(part.per_pathway) {
            dst.extend(src);
        }
    }
    Ok(out)
}

pub fn evaluate(model: &MultiPathModel, split: &DatasetSplit, protocol: Protocol) -> Result<Evaluation> {
    predict(model, split)?.accuracy(protocol, split.labels())
}
