//! Weakness scoring and weakest-component logit composition.
//!
//! Each of `N` pathways emits raw logits `u[b, i, j]` for sample `b`, class `i`
//! and pathway `j`. After a per-pathway log-softmax over classes (`û`), the
//! weakness of a component under a one-hot target `t` is
//!
//! ```text
//! W[b, i, j] = t_i + (-1)^(1 - t_i) * û[b, i, j] / Σ_m û[b, i, m]
//! ```
//!
//! Because every `û` is strictly negative the ratio lies in `(0, 1]`, so `W`
//! falls in `(1, 2]` for the positive class and `[-1, 0)` for negatives.
//!
//! * Training composes `v[b, i] = û[b, i, argmax_j W]` and backpropagates a
//!   cross-entropy through `v`; only the selected components get gradient.
//! * Strong inference builds a pseudo target from the globally strongest
//!   class, recomputes `W` against it and takes `argmin_j W` per class.
//! * Mean inference averages `û` over pathways.
//!
//! Selections are computed from values outside the tape; every argmax and
//! argmin breaks ties toward the lowest index.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{Tape, Tensor, Var};

/// Raw logits of `N` pathways recorded on a tape, each `[batch×C]`.
#[derive(Clone, Debug)]
pub struct LogitBundle {
    pathways: Vec<Var>,
    batch: usize,
    classes: usize,
}

impl LogitBundle {
    pub fn new(tape: &Tape, pathways: Vec<Var>) -> Result<Self> {
        let first = *pathways
            .first()
            .ok_or_else(|| Error::Contract("a logit bundle needs at least one pathway".into()))?;
        let shape = tape.shape(first).to_vec();
        if shape.len() != 2 {
            return Err(Error::dim("logit bundle", &shape, &[0, 0]));
        }
        for &p in &pathways[1..] {
            if tape.shape(p) != shape.as_slice() {
                return Err(Error::dim("logit bundle", &shape, tape.shape(p)));
            }
        }
        if shape[1] < 2 {
            return Err(Error::DegenerateClassification(shape[1]));
        }
        Ok(Self {
            pathways,
            batch: shape[0],
            classes: shape[1],
        })
    }

    pub fn pathways(&self) -> &[Var] {
        &self.pathways
    }

    pub fn len(&self) -> usize {
        self.pathways.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pathways.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// Class labels of a batch, viewed as one-hot rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetBatch {
    labels: Vec<usize>,
    classes: usize,
}

impl TargetBatch {
    pub fn from_labels(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::DegenerateClassification(classes));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Consistency(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { labels, classes })
    }

    /// Accepts a `[batch×C]` matrix with exactly one `1` per row.
    pub fn from_one_hot(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::dim("one-hot target", s, &[0, 0]));
        }
        let mut labels = Vec::with_capacity(s[0]);
        for row in t.data().chunks(s[1]) {
            let ones: Vec<usize> = (0..row.len()).filter(|&i| row[i] == 1.0).collect();
            let valid = ones.len() == 1 && row.iter().all(|&v| v == 0.0 || v == 1.0);
            if !valid {
                return Err(Error::Consistency(format!("row {row:?} is not one-hot")));
            }
            labels.push(ones[0]);
        }
        Self::from_labels(labels, s[1])
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

    pub fn one_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.labels.len(), self.classes]);
        for (r, &y) in self.labels.iter().enumerate() {
            t.data_mut()[r * self.classes + y] = 1.0;
        }
        t
    }

    fn is_positive(&self, b: usize, i: usize) -> bool {
        self.labels[b] == i
    }
}

/// Dense `[batch×C×N]` array; the pathway axis is contiguous.
#[derive(Clone, Debug, PartialEq)]
struct Cube {
    values: Vec<f64>,
    batch: usize,
    classes: usize,
    pathways: usize,
}

impl Cube {
    fn at(&self, b: usize, i: usize, j: usize) -> f64 {
        self.values[(b * self.classes + i) * self.pathways + j]
    }

    fn row(&self, b: usize, i: usize) -> &[f64] {
        let start = (b * self.classes + i) * self.pathways;
        &self.values[start..start + self.pathways]
    }

    fn shape(&self) -> [usize; 3] {
        [self.batch, self.classes, self.pathways]
    }
}

/// Log-softmaxed logits `û` as `[batch×C×N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbMatrix(Cube);

impl LogProbMatrix {
    /// Log-softmax of raw per-pathway logits, each `[batch×C]`, off the tape.
    pub fn from_logits(pathways: &[Tensor]) -> Result<Self> {
        let first = pathways
            .first()
            .ok_or_else(|| Error::Contract("need at least one pathway".into()))?;
        let shape = first.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::dim("log-prob matrix", &shape, &[0, 0]));
        }
        if shape[1] < 2 {
            return Err(Error::DegenerateClassification(shape[1]));
        }
        let lp: Vec<Vec<f64>> = pathways
            .iter()
            .map(|p| {
                if p.shape() != shape.as_slice() {
                    return Err(Error::dim("log-prob matrix", &shape, p.shape()));
                }
                Ok(kernels::log_softmax_rows(p.data(), shape[1]))
            })
            .collect::<Result<_>>()?;
        Ok(Self::interleave(&lp, shape[0], shape[1]))
    }

    /// Wraps precomputed `[batch×C×N]` log-probabilities.
    pub fn from_values(batch: usize, classes: usize, pathways: usize, values: Vec<f64>) -> Result<Self> {
        if batch * classes * pathways != values.len() {
            return Err(Error::dim("log-prob matrix", &[batch, classes, pathways], &[values.len()]));
        }
        if classes < 2 {
            return Err(Error::DegenerateClassification(classes));
        }
        if pathways == 0 {
            return Err(Error::Contract("need at least one pathway".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v < 0.0)) {
            return Err(Error::Contract(format!("log-probabilities must be strictly negative, found {v}")));
        }
        Ok(Self(Cube {
            values,
            batch,
            classes,
            pathways,
        }))
    }

    fn interleave(per_path: &[Vec<f64>], batch: usize, classes: usize) -> Self {
        let n = per_path.len();
        let mut values = vec![0.0; batch * classes * n];
        for (j, p) in per_path.iter().enumerate() {
            for (bi, &v) in p.iter().enumerate() {
                values[bi * n + j] = v;
            }
        }
        Self(Cube {
            values,
            batch,
            classes,
            pathways: n,
        })
    }

    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.0.at(b, i, j)
    }

    /// `û[b, i, ·]` across pathways.
    pub fn row(&self, b: usize, i: usize) -> &[f64] {
        self.0.row(b, i)
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    /// `[batch, classes, pathways]`
    pub fn shape(&self) -> [usize; 3] {
        self.0.shape()
    }

    pub fn batch(&self) -> usize {
        self.0.batch
    }

    pub fn classes(&self) -> usize {
        self.0.classes
    }

    pub fn pathways(&self) -> usize {
        self.0.pathways
    }

    /// Pathway `j` as a `[batch×C]` tensor.
    pub fn pathway(&self, j: usize) -> Tensor {
        let (b, c) = (self.batch(), self.classes());
        let data = (0..b * c).map(|bi| self.0.values[bi * self.pathways() + j]).collect();
        Tensor::new(vec![b, c], data).expect("shape by construction")
    }
}

/// Weakness scores `W` as `[batch×C×N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeaknessMatrix(Cube);

impl WeaknessMatrix {
    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.0.at(b, i, j)
    }

    pub fn row(&self, b: usize, i: usize) -> &[f64] {
        self.0.row(b, i)
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn shape(&self) -> [usize; 3] {
        self.0.shape()
    }
}

/// Chosen pathway per `(sample, class)`, stored `[batch×C]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMap {
    indices: Vec<usize>,
    batch: usize,
    classes: usize,
}

impl SelectionMap {
    pub fn get(&self, b: usize, i: usize) -> usize {
        self.indices[b * self.classes + i]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Pathways that appear anywhere in the map.
    pub fn pathways_used(&self) -> BTreeSet<usize> {
        self.indices.iter().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    TrainWeakest,
    InferStrong,
    InferMean,
}

/// Combined `[batch×C]` logits produced by one of the composition modes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedOutput {
    pub logits: Tensor,
    /// `None` for [`CompositionMode::InferMean`].
    pub selection: Option<SelectionMap>,
    pub mode: CompositionMode,
}

impl ComposedOutput {
    /// Row-wise argmax, lowest class on ties.
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.logits)
    }
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.shape()[1];
    t.data().chunks(c).map(argmax_first).collect()
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

fn argmin_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = k;
        }
    }
    best
}

/// Records the per-pathway log-softmax on the tape.
///
/// Returns the tape handles (one `[batch×C]` per pathway) together with the
/// gradient-free `[batch×C×N]` copy used for scoring.
pub fn log_softmax_bundle(tape: &mut Tape, bundle: &LogitBundle) -> Result<(Vec<Var>, LogProbMatrix)> {
    let vars = bundle
        .pathways()
        .iter()
        .map(|&p| tape.log_softmax_rows(p))
        .collect::<Result<Vec<_>>>()?;
    let per_path: Vec<Vec<f64>> = vars.iter().map(|&v| tape.value(v).data().to_vec()).collect();
    let lp = LogProbMatrix::interleave(&per_path, bundle.batch(), bundle.classes());
    Ok((vars, lp))
}

fn check_target(lp: &LogProbMatrix, target: &TargetBatch) -> Result<()> {
    if target.len() != lp.batch() || target.classes() != lp.classes() {
        return Err(Error::dim("target", &lp.shape(), &[target.len(), target.classes()]));
    }
    Ok(())
}

/// Weakness of every component with respect to `target`.
pub fn weakness(lp: &LogProbMatrix, target: &TargetBatch) -> Result<WeaknessMatrix> {
    check_target(lp, target)?;
    let [batch, classes, n] = lp.shape();
    let mut values = Vec::with_capacity(lp.values().len());
    for b in 0..batch {
        for i in 0..classes {
            let row = lp.row(b, i);
            let total: f64 = row.iter().sum();
            if target.is_positive(b, i) {
                values.extend(row.iter().map(|u| 1.0 + u / total));
            } else {
                values.extend(row.iter().map(|u| -(u / total)));
            }
        }
    }
    Ok(WeaknessMatrix(Cube {
        values,
        batch,
        classes,
        pathways: n,
    }))
}

fn select(lp: &LogProbMatrix, w: &WeaknessMatrix, pick: fn(&[f64]) -> usize) -> (Tensor, SelectionMap) {
    let [batch, classes, _] = lp.shape();
    let mut indices = Vec::with_capacity(batch * classes);
    let mut logits = Vec::with_capacity(batch * classes);
    for b in 0..batch {
        for i in 0..classes {
            let j = pick(w.row(b, i));
            indices.push(j);
            logits.push(lp.get(b, i, j));
        }
    }
    let logits = Tensor::new(vec![batch, classes], logits).expect("shape by construction");
    (logits, SelectionMap { indices, batch, classes })
}

/// Training composition: per class, the component of the weakest pathway.
pub fn compose_weakest(lp: &LogProbMatrix, target: &TargetBatch) -> Result<ComposedOutput> {
    let w = weakness(lp, target)?;
    let (logits, selection) = select(lp, &w, argmax_first);
    Ok(ComposedOutput {
        logits,
        selection: Some(selection),
        mode: CompositionMode::TrainWeakest,
    })
}

/// One-hot on the class holding the largest `max_j û[b, i, j]`.
pub fn pseudo_target(lp: &LogProbMatrix) -> TargetBatch {
    let [batch, classes, _] = lp.shape();
    let labels = (0..batch)
        .map(|b| {
            let best: Vec<f64> = (0..classes)
                .map(|i| lp.row(b, i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            argmax_first(&best)
        })
        .collect();
    TargetBatch { labels, classes }
}

/// Strong inference: least-weak component per class under the pseudo target.
pub fn strong_inference(lp: &LogProbMatrix) -> ComposedOutput {
    let t = pseudo_target(lp);
    let w = weakness(lp, &t).expect("pseudo target matches by construction");
    let (logits, selection) = select(lp, &w, argmin_first);
    ComposedOutput {
        logits,
        selection: Some(selection),
        mode: CompositionMode::InferStrong,
    }
}

/// Mean inference: average of `û` over pathways.
pub fn mean_inference(lp: &LogProbMatrix) -> ComposedOutput {
    let [batch, classes, n] = lp.shape();
    let logits = (0..batch * classes)
        .map(|bi| lp.values()[bi * n..(bi + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    ComposedOutput {
        logits: Tensor::new(vec![batch, classes], logits).expect("shape by construction"),
        selection: None,
        mode: CompositionMode::InferMean,
    }
}

/// Options of [`weakroute_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossOptions {
    /// Apply softmax cross-entropy to the composed vector (`true`), or treat
    /// it as log-probabilities and take the negative log-likelihood.
    pub renormalize: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { renormalize: true }
    }
}

/// Scalar loss on the tape plus the values it was routed by.
#[derive(Debug)]
pub struct RoutedLoss {
    pub loss: Var,
    pub log_probs: LogProbMatrix,
    pub composed: ComposedOutput,
}

impl RoutedLoss {
    pub fn selection(&self) -> &SelectionMap {
        self.composed.selection.as_ref().expect("training composition selects")
    }
}

/// Cross-entropy of the weakest-component composition against `target`.
pub fn weakroute_loss(tape: &mut Tape, bundle: &LogitBundle, target: &TargetBatch, opts: LossOptions) -> Result<RoutedLoss> {
    let (lp_vars, lp) = log_softmax_bundle(tape, bundle)?;
    let composed = compose_weakest(&lp, target)?;
    let selection = composed.selection.as_ref().expect("training composition selects");
    let v = tape.route(&lp_vars, selection.indices())?;
    let loss = if opts.renormalize {
        tape.softmax_cross_entropy(v, target.labels())?
    } else {
        tape.nll(v, target.labels())?
    };
    Ok(RoutedLoss {
        loss,
        log_probs: lp,
        composed,
    })
}

/// Traditional comparator: mean of raw logits, then softmax cross-entropy.
pub fn average_loss_baseline(tape: &mut Tape, bundle: &LogitBundle, target: &TargetBatch) -> Result<Var> {
    if target.len() != bundle.batch() || target.classes() != bundle.classes() {
        return Err(Error::dim(
            "target",
            &[bundle.batch(), bundle.classes()],
            &[target.len(), target.classes()],
        ));
    }
    let mean = tape.mean_of(bundle.pathways())?;
    tape.softmax_cross_entropy(mean, target.labels())
}
