//! Whole-model gradient check on tiny instances of each topology.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::models::{build_m1, build_m2, build_m3, build_m4, derive_seed, ColumnSpec, Geometry, MultiPathModel, Region, Topology};
use crate::tensor::{finite_diff_grad_many, GradCheckReport, Tensor};
use crate::weakroute::{weakroute_loss, LossOptions, TargetBatch};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct ModelGradCheck {
    pub topology: Topology,
    pub seed: u64,
    pub parameters: usize,
    /// Name of the parameter tensor holding the worst coordinate.
    pub worst_parameter: String,
    pub passed: bool,
    #[serde(flatten)]
    pub report: GradCheckReport,
}

const CLASSES: usize = 3;
const BATCH: usize = 4;

/// The tiny model `gradcheck` differentiates for `topology`.
///
/// Every parameter is jittered with `N(0, 0.1²)` noise so that zero biases
/// behind dead units cannot produce exactly tied pathways, where the loss
/// has a kink.
pub fn tiny_model(topology: Topology, seed: u64) -> Result<MultiPathModel> {
    let mut model = tiny_architecture(topology, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6a69_7474));
    for p in model.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(model)
}

fn tiny_architecture(topology: Topology, seed: u64) -> Result<MultiPathModel> {
    match topology {
        Topology::M1 => build_m1(2, Geometry::new(1, 4, 4), ColumnSpec::mlp(&[5], CLASSES), seed),
        Topology::M2 => build_m2(Geometry::new(1, 8, 8), ColumnSpec::cnn(&[3, 3, 3], CLASSES), seed),
        Topology::M3 => build_m3(Geometry::new(1, 8, 8), ColumnSpec::cnn(&[2], CLASSES), seed),
        Topology::M4 => {
            let g = Geometry::new(1, 4, 4);
            build_m4(Region::default_layout(g), g, ColumnSpec::mlp(&[5], CLASSES), seed)
        }
    }
}

/// Checks the weakroute loss gradient of every parameter of [`tiny_model`].
pub fn gradcheck_topology(topology: Topology, seed: u64) -> Result<ModelGradCheck> {
    let model = tiny_model(topology, seed)?;
    let g = model.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6772_6164));
    let data = (0..BATCH * g.sample_len()).map(|_| rng.sample(StandardNormal)).collect();
    let input = Tensor::new(vec![BATCH, g.channels, g.height, g.width], data)?;
    let labels = (0..BATCH).map(|_| rng.random_range(0..CLASSES)).collect();
    let target = TargetBatch::from_labels(labels, CLASSES)?;
    let values: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let report = finite_diff_grad_many(
        |tape, vars| {
            let bundle = model.forward_with(tape, &input, vars)?;
            Ok(weakroute_loss(tape, &bundle, &target, LossOptions::default())?.loss)
        },
        &values,
        GRADCHECK_STEP,
    )?;
    Ok(ModelGradCheck {
        topology,
        seed,
        parameters: model.param_count(),
        worst_parameter: model.params().get(report.worst_tensor).name.clone(),
        passed: report.max_rel_error < GRADCHECK_TOLERANCE,
        report,
    })
}
