//! Optimizers, the training loop and evaluation.

mod check;
mod eval;
mod optim;

pub use check::{gradcheck_topology, tiny_model, ModelGradCheck, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use eval::{evaluate, predict, Evaluation, Predictions, Protocol, EVAL_BATCH};
pub use optim::{adam_step, sgd_momentum_step, AdamHyper, AdamState, Optimizer, OptimizerKind};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{batches, DatasetSplit};
use crate::error::{Error, Result};
use crate::models::MultiPathModel;
use crate::tensor::{Tape, Tensor};
use crate::weakroute::{average_loss_baseline, weakroute_loss, LossOptions, TargetBatch};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Weakroute,
    AverageBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// SGD momentum coefficient.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss_mode: LossMode,
    pub loss_renormalize: bool,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            loss_mode: LossMode::Weakroute,
            loss_renormalize: true,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("train.{field}: {why}")));
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1/beta2", "must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    /// Mean-protocol accuracy on the training split after the epoch.
    pub train_acc: f64,
    pub test_strong: f64,
    pub test_mean: f64,
    pub test_pathways: Vec<f64>,
}

impl EpochMetrics {
    pub fn csv_header(pathways: usize) -> String {
        let mut h = String::from("epoch,loss,train_acc,test_strong,test_mean");
        for j in 0..pathways {
            h.push_str(&format!(",pathway_{j}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{},{},{}",
            self.epoch, self.loss, self.train_acc, self.test_strong, self.test_mean
        );
        for a in &self.test_pathways {
            r.push_str(&format!(",{a}"));
        }
        r
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best training accuracy (earliest on ties).
    pub best: MultiPathModel,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

/// Batch losses kept for the non-finite loss diagnostic.
const LOSS_HISTORY: usize = 64;

/// Loss of `images` under the configured mode; returns the tape, loss value
/// and the parameter gradients in [`ParamSet`](crate::models::ParamSet) order.
pub fn loss_and_grads(model: &MultiPathModel, images: &Tensor, target: &TargetBatch, cfg: &TrainConfig) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, images, true)?;
    let loss = match cfg.loss_mode {
        LossMode::Weakroute => {
            let opts = LossOptions {
                renormalize: cfg.loss_renormalize,
            };
            weakroute_loss(&mut tape, &fwd.bundle, target, opts)?.loss
        }
        LossMode::AverageBaseline => average_loss_baseline(&mut tape, &fwd.bundle, target)?,
    };
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let mut grads = tape.backward(loss)?;
    let g = fwd
        .params
        .iter()
        .map(|&v| grads.take(v).ok_or_else(|| Error::Contract("missing parameter gradient".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, g))
}

/// Trains `model` in place; `on_epoch` sees each epoch's metrics as they
/// are produced.
pub fn train_with(
    model: &mut MultiPathModel,
    train: &DatasetSplit,
    test: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for (name, split) in [("train", train), ("test", test)] {
        if split.geometry() != model.geometry() || split.classes() != model.classes() {
            return Err(Error::Consistency(format!(
                "{name} split ({:?}, {} classes) does not match the model ({:?}, {} classes)",
                split.geometry(),
                split.classes(),
                model.geometry(),
                model.classes()
            )));
        }
    }
    let mut opt = Optimizer::new(cfg.optimizer, model.params(), cfg.momentum, cfg.adam());
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut history: Vec<f64> = Vec::new();
    let mut best: Option<(f64, usize, MultiPathModel)> = None;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, batch) in batches(train, cfg.batch_size, cfg.seed, epoch, cfg.shuffle)?.enumerate() {
            let (loss, grads) = loss_and_grads(model, &batch.images, &batch.target, cfg)?;
            if history.len() == LOSS_HISTORY {
                history.remove(0);
            }
            history.push(loss);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                    history,
                });
            }
            opt.step(model.params_mut(), &grads, cfg.learning_rate)?;
            total += loss;
            count += 1;
        }
        let train_acc = evaluate(model, train, Protocol::Mean)?.accuracy;
        let test_pred = predict(model, test)?;
        let labels = test.labels();
        let m = EpochMetrics {
            epoch,
            loss: total / count as f64,
            train_acc,
            test_strong: test_pred.accuracy(Protocol::Strong, labels)?.accuracy,
            test_mean: test_pred.accuracy(Protocol::Mean, labels)?.accuracy,
            test_pathways: test_pred.accuracy(Protocol::PerPathway, labels)?.per_pathway.unwrap_or_default(),
        };
        on_epoch(&m)?;
        if best.as_ref().is_none_or(|(acc, _, _)| train_acc > *acc) {
            best = Some((train_acc, epoch, model.clone()));
        }
        metrics.push(m);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, metrics })
}

pub fn train(model: &mut MultiPathModel, train: &DatasetSplit, test: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train, test, cfg, |_| Ok(()))
}

/// Pathways selected by the weakroute composition of one batch, next to the
/// pathways whose exclusive parameters received a nonzero gradient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingCheck {
    pub selected: BTreeSet<usize>,
    pub receiving: BTreeSet<usize>,
}

/// Requires a topology with pathway-exclusive parameters (M1, M2, M4).
pub fn routing_check(model: &MultiPathModel, images: &Tensor, target: &TargetBatch, opts: LossOptions) -> Result<RoutingCheck> {
    if (0..model.pathways()).any(|j| model.exclusive_params(j).is_empty()) {
        return Err(Error::Contract(format!("{} has no pathway-exclusive parameters", model.topology())));
    }
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, images, true)?;
    let routed = weakroute_loss(&mut tape, &fwd.bundle, target, opts)?;
    let selected = routed.selection().pathways_used();
    let grads = tape.backward(routed.loss)?;
    let receiving = (0..model.pathways())
        .filter(|&j| {
            model
                .exclusive_params(j)
                .iter()
                .any(|&k| grads.get(fwd.params[k]).is_some_and(|g| g.data().iter().any(|&x| x != 0.0)))
        })
        .collect();
    Ok(RoutingCheck { selected, receiving })
}
