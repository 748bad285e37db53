//! Desk-scale multi-pathway topologies.
//!
//! * **M1**: `N` independently initialized columns on the full input.
//! * **M2**: one trunk with classifier heads tapped after an early, a middle
//!   and the final block; the trunk is shared by all heads.
//! * **M3**: a trunk reduced to a 4×4 feature grid with 1×1, 2×2 and 4×4
//!   prediction maps; the coarse maps are nearest-upsampled to 4×4 and added,
//!   giving one pathway per grid cell (`N = 16`).
//! * **M4**: one column per input region; each crop is nearest-resized to the
//!   column input size.

mod checkpoint;
mod layers;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{Param, ParamSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::weakroute::LogitBundle;
use layers::{Feat, Stack, StackBuilder};

/// Input geometry of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    /// Dense ReLU layers of the given widths.
    Mlp { hidden: Vec<usize> },
    /// 3×3 conv + ReLU + 2×2 pool blocks of the given channel counts.
    Cnn { channels: Vec<usize> },
}

/// Architecture of one column, trunk or head family. The final width is
/// always `classes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    #[serde(flatten)]
    pub kind: ColumnKind,
    pub classes: usize,
}

impl ColumnSpec {
    pub fn mlp(hidden: &[usize], classes: usize) -> Self {
        Self {
            kind: ColumnKind::Mlp { hidden: hidden.to_vec() },
            classes,
        }
    }

    pub fn cnn(channels: &[usize], classes: usize) -> Self {
        Self {
            kind: ColumnKind::Cnn {
                channels: channels.to_vec(),
            },
            classes,
        }
    }

    fn blocks(&self) -> usize {
        match &self.kind {
            ColumnKind::Mlp { hidden } => hidden.len(),
            ColumnKind::Cnn { channels } => channels.len(),
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn full(g: Geometry) -> Self {
        Self::new(0, 0, g.width, g.height)
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.width && py >= self.y && py < self.y + self.height
    }

    /// Splits `g` into a `k×k` grid (the last row/column absorbs remainders).
    fn grid(g: Geometry, k: usize) -> Vec<Region> {
        let (cw, ch) = (g.width / k, g.height / k);
        let mut out = Vec::with_capacity(k * k);
        for gy in 0..k {
            for gx in 0..k {
                let w = if gx + 1 == k { g.width - gx * cw } else { cw };
                let h = if gy + 1 == k { g.height - gy * ch } else { ch };
                out.push(Region::new(gx * cw, gy * ch, w, h));
            }
        }
        out
    }

    /// Full image plus the four quadrants.
    pub fn default_layout(g: Geometry) -> Vec<Region> {
        let mut r = vec![Region::full(g)];
        r.extend(Self::grid(g, 2));
        r
    }

    /// 23 regions: full image, 2×2 quadrants, 4×4 cells, and a horizontal and
    /// a vertical half-size strip through the centre.
    pub fn quadtree23(g: Geometry) -> Vec<Region> {
        let mut r = Self::default_layout(g);
        r.extend(Self::grid(g, 4));
        let (hw, hh) = (g.width / 2, g.height / 2);
        r.push(Region::new(0, g.height / 4, g.width, hh));
        r.push(Region::new(g.width / 4, 0, hw, g.height));
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    M1,
    M2,
    M3,
    M4,
}

impl Topology {
    pub fn tag(self) -> u32 {
        match self {
            Topology::M1 => 1,
            Topology::M2 => 2,
            Topology::M3 => 3,
            Topology::M4 => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            1 => Topology::M1,
            2 => Topology::M2,
            3 => Topology::M3,
            4 => Topology::M4,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Topology::M1 => "m1",
            Topology::M2 => "m2",
            Topology::M3 => "m3",
            Topology::M4 => "m4",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Topology::M1),
            "m2" => Ok(Topology::M2),
            "m3" => Ok(Topology::M3),
            "m4" => Ok(Topology::M4),
            other => Err(Error::Config(format!("unknown topology {other:?}"))),
        }
    }
}

/// Topology-specific layout data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "lowercase")]
pub enum Layout {
    M1 {
        column_seeds: Vec<u64>,
    },
    M2,
    M3,
    M4 {
        regions: Vec<Region>,
        /// `[height, width]` every crop is resized to.
        column_input: [usize; 2],
    },
}

/// Everything needed to rebuild a model's structure and initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub geometry: Geometry,
    pub column: ColumnSpec,
    pub layout: Layout,
    pub seed: u64,
}

impl ModelSpec {
    pub fn topology(&self) -> Topology {
        match self.layout {
            Layout::M1 { .. } => Topology::M1,
            Layout::M2 => Topology::M2,
            Layout::M3 => Topology::M3,
            Layout::M4 { .. } => Topology::M4,
        }
    }
}

/// SplitMix64 finalizer, used to derive per-column seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
struct Crop {
    /// Source offset within one input sample for every column-input element.
    offsets: Vec<usize>,
    out: Geometry,
}

impl Crop {
    fn new(region: Region, input: Geometry, out_h: usize, out_w: usize) -> Self {
        let mut offsets = Vec::with_capacity(input.channels * out_h * out_w);
        for c in 0..input.channels {
            for oy in 0..out_h {
                let sy = region.y + oy * region.height / out_h;
                for ox in 0..out_w {
                    let sx = region.x + ox * region.width / out_w;
                    offsets.push((c * input.height + sy) * input.width + sx);
                }
            }
        }
        Self {
            offsets,
            out: Geometry::new(input.channels, out_h, out_w),
        }
    }

    fn apply(&self, input: &Tensor) -> Tensor {
        let b = input.shape()[0];
        let stride = input.len() / b.max(1);
        let src = input.data();
        let mut data = Vec::with_capacity(b * self.offsets.len());
        for s in 0..b {
            let base = s * stride;
            data.extend(self.offsets.iter().map(|&o| src[base + o]));
        }
        Tensor::new(vec![b, self.out.channels, self.out.height, self.out.width], data).expect("shape by construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Net {
    /// M1 and M4. `crops` is present for M4.
    Columns { columns: Vec<Stack>, crops: Option<Vec<Crop>> },
    /// M2: head `k` reads the output of block `taps[k]`.
    Tapped {
        blocks: Vec<Stack>,
        heads: Vec<Stack>,
        taps: Vec<usize>,
    },
    /// M3: trunk to a 4×4 grid plus three prediction maps.
    Grid {
        trunk: Stack,
        head4: Stack,
        head2: Stack,
        head1: Stack,
    },
}

/// A multi-pathway classifier producing a [`LogitBundle`].
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPathModel {
    spec: ModelSpec,
    params: ParamSet,
    net: Net,
    pathways: usize,
}

/// Result of [`MultiPathModel::forward`].
#[derive(Debug)]
pub struct Forward {
    pub bundle: LogitBundle,
    /// Parameter handles, in [`ParamSet`] order.
    pub params: Vec<Var>,
}

fn column_stack(spec: &ColumnSpec, params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, input: Geometry) -> Result<Stack> {
    let feat = Feat::Map {
        c: input.channels,
        h: input.height,
        w: input.width,
    };
    let mut b = StackBuilder::new(params, rng, prefix, feat);
    match &spec.kind {
        ColumnKind::Mlp { hidden } => {
            for &h in hidden {
                b = b.dense(h).relu();
            }
        }
        ColumnKind::Cnn { channels } => {
            for &c in channels {
                b = b.conv(c, 3)?.relu().pool_if_even();
            }
        }
    }
    Ok(b.dense(spec.classes).finish().0)
}

fn validate_column(spec: &ColumnSpec, g: Geometry) -> Result<()> {
    if spec.classes < 2 {
        return Err(Error::DegenerateClassification(spec.classes));
    }
    if g.channels == 0 || g.height == 0 || g.width == 0 {
        return Err(Error::Config(format!("empty input geometry {g:?}")));
    }
    let zero = match &spec.kind {
        ColumnKind::Mlp { hidden } => hidden.contains(&0),
        ColumnKind::Cnn { channels } => channels.contains(&0),
    };
    if zero {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    Ok(())
}

impl MultiPathModel {
    /// Builds and initializes a model from its spec.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        validate_column(&spec.column, spec.geometry)?;
        let g = spec.geometry;
        let mut params = ParamSet::default();
        let (net, pathways) = match &spec.layout {
            Layout::M1 { column_seeds } => {
                if column_seeds.is_empty() {
                    return Err(Error::Config(format!("M1 needs at least 1 column, got {}", column_seeds.len())));
                }
                let columns = column_seeds
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(s);
                        column_stack(&spec.column, &mut params, &mut rng, &format!("col{j}"), g)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let n = columns.len();
                (Net::Columns { columns, crops: None }, n)
            }
            Layout::M4 { regions, column_input } => {
                if regions.is_empty() {
                    return Err(Error::Config("M4 needs at least one region".into()));
                }
                let [ch, cw] = *column_input;
                if ch == 0 || cw == 0 {
                    return Err(Error::Config("M4 column input must be non-empty".into()));
                }
                for (k, r) in regions.iter().enumerate() {
                    if r.width == 0 || r.height == 0 || r.x + r.width > g.width || r.y + r.height > g.height {
                        return Err(Error::Config(format!(
                            "region {k} {r:?} lies outside the {}×{} input",
                            g.height, g.width
                        )));
                    }
                }
                let col_geom = Geometry::new(g.channels, ch, cw);
                let mut columns = Vec::with_capacity(regions.len());
                let mut crops = Vec::with_capacity(regions.len());
                for (j, &r) in regions.iter().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, j as u64));
                    columns.push(column_stack(&spec.column, &mut params, &mut rng, &format!("col{j}"), col_geom)?);
                    crops.push(Crop::new(r, g, ch, cw));
                }
                let n = columns.len();
                (
                    Net::Columns {
                        columns,
                        crops: Some(crops),
                    },
                    n,
                )
            }
            Layout::M2 => Self::build_m2_net(spec, &mut params)?,
            Layout::M3 => Self::build_m3_net(spec, &mut params)?,
        };
        Ok(Self {
            spec: spec.clone(),
            params,
            net,
            pathways,
        })
    }

    fn build_m2_net(spec: &ModelSpec, params: &mut ParamSet) -> Result<(Net, usize)> {
        let n_blocks = spec.column.blocks();
        if n_blocks < 3 {
            return Err(Error::Config(format!("M2 trunk needs at least 3 blocks, got {n_blocks}")));
        }
        let g = spec.geometry;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut feat = Feat::Map {
            c: g.channels,
            h: g.height,
            w: g.width,
        };
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut feats = Vec::with_capacity(n_blocks);
        for k in 0..n_blocks {
            let b = StackBuilder::new(params, &mut rng, format!("block{k}"), feat);
            let b = match &spec.column.kind {
                ColumnKind::Mlp { hidden } => b.dense(hidden[k]).relu(),
                ColumnKind::Cnn { channels } => b.conv(channels[k], 3)?.relu().pool_if_even(),
            };
            let (stack, out) = b.finish();
            blocks.push(stack);
            feats.push(out);
            feat = out;
        }
        let mut taps = vec![0, (n_blocks - 1) / 2, n_blocks - 1];
        taps.dedup();
        let heads = taps
            .iter()
            .map(|&t| {
                StackBuilder::new(params, &mut rng, format!("head{t}"), feats[t])
                    .dense(spec.column.classes)
                    .finish()
                    .0
            })
            .collect::<Vec<_>>();
        let n = heads.len();
        Ok((Net::Tapped { blocks, heads, taps }, n))
    }

    fn build_m3_net(spec: &ModelSpec, params: &mut ParamSet) -> Result<(Net, usize)> {
        let ColumnKind::Cnn { channels } = &spec.column.kind else {
            return Err(Error::Config("M3 needs a convolutional trunk".into()));
        };
        let g = spec.geometry;
        let ratio = g.height / 4;
        if g.height != g.width || !g.height.is_multiple_of(4) || !ratio.is_power_of_two() {
            return Err(Error::Config(format!(
                "M3 needs a square input whose side is 4·2^k, got {}×{}",
                g.height, g.width
            )));
        }
        let pools = ratio.trailing_zeros() as usize;
        if channels.is_empty() || pools > channels.len() {
            return Err(Error::Config(format!(
                "M3 trunk with {} blocks cannot reduce {}×{} to a 4×4 grid",
                channels.len(),
                g.height,
                g.width
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let feat = Feat::Map {
            c: g.channels,
            h: g.height,
            w: g.width,
        };
        let mut b = StackBuilder::new(params, &mut rng, "trunk", feat);
        for (k, &c) in channels.iter().enumerate() {
            b = b.conv(c, 3)?.relu();
            if k < pools {
                b = b.pool()?;
            }
        }
        let (trunk, feat) = b.finish();
        let Feat::Map { c: fc, .. } = feat else { unreachable!() };
        let classes = spec.column.classes;
        let head = |params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, side: usize| -> Result<Stack> {
            let f = Feat::Map { c: fc, h: side, w: side };
            Ok(StackBuilder::new(params, rng, name, f).conv(classes, 1)?.finish().0)
        };
        let head4 = head(params, &mut rng, "grid4", 4)?;
        let head2 = head(params, &mut rng, "grid2", 2)?;
        let head1 = head(params, &mut rng, "grid1", 1)?;
        Ok((
            Net::Grid {
                trunk,
                head4,
                head2,
                head1,
            },
            16,
        ))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn topology(&self) -> Topology {
        self.spec.topology()
    }

    pub fn geometry(&self) -> Geometry {
        self.spec.geometry
    }

    pub fn classes(&self) -> usize {
        self.spec.column.classes
    }

    /// Pathway count `N`.
    pub fn pathways(&self) -> usize {
        self.pathways
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Parameter indices that feed pathway `j` and no other pathway.
    pub fn exclusive_params(&self, j: usize) -> Vec<usize> {
        match &self.net {
            Net::Columns { columns, .. } => columns.get(j).map(Stack::param_indices).unwrap_or_default(),
            Net::Tapped { heads, .. } => heads.get(j).map(Stack::param_indices).unwrap_or_default(),
            Net::Grid { .. } => Vec::new(),
        }
    }

    /// Parameter indices of M2 trunk block `k`.
    pub fn block_params(&self, k: usize) -> Vec<usize> {
        match &self.net {
            Net::Tapped { blocks, .. } => blocks.get(k).map(Stack::param_indices).unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let g = self.spec.geometry;
        let s = input.shape();
        if s.len() != 4 || s[0] == 0 || s[1..] != [g.channels, g.height, g.width] {
            return Err(Error::dim("model input", s, &[0, g.channels, g.height, g.width]));
        }
        Ok(())
    }

    /// Records a forward pass of `input` (`[b×c×h×w]`) on `tape`.
    ///
    /// Parameters are bound as grad-enabled leaves when `trainable`.
    pub fn forward(&self, tape: &mut Tape, input: &Tensor, trainable: bool) -> Result<Forward> {
        let vars = self.params.bind(tape, trainable);
        let bundle = self.forward_with(tape, input, &vars)?;
        Ok(Forward { bundle, params: vars })
    }

    /// Forward pass using `vars` (one per parameter, in [`ParamSet`] order)
    /// in place of the stored parameter values.
    pub fn forward_with(&self, tape: &mut Tape, input: &Tensor, vars: &[Var]) -> Result<LogitBundle> {
        self.check_input(input)?;
        if vars.len() != self.params.len() {
            return Err(Error::dim("parameter handles", &[self.params.len()], &[vars.len()]));
        }
        for (p, &v) in self.params.iter().zip(vars) {
            if tape.shape(v) != p.value.shape() {
                return Err(Error::dim("parameter handle", p.value.shape(), tape.shape(v)));
            }
        }
        let pathways = match &self.net {
            Net::Columns { columns, crops } => {
                let shared = match crops {
                    None => Some(tape.constant(input.clone())),
                    Some(_) => None,
                };
                columns
                    .iter()
                    .enumerate()
                    .map(|(j, col)| {
                        let x = match (shared, crops) {
                            (Some(x), _) => x,
                            (None, Some(crops)) => tape.constant(crops[j].apply(input)),
                            (None, None) => unreachable!(),
                        };
                        col.forward(tape, vars, x)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Net::Tapped { blocks, heads, taps } => {
                let mut x = tape.constant(input.clone());
                let mut outs = Vec::with_capacity(blocks.len());
                for b in blocks {
                    x = b.forward(tape, vars, x)?;
                    outs.push(x);
                }
                heads
                    .iter()
                    .zip(taps)
                    .map(|(h, &t)| h.forward(tape, vars, outs[t]))
                    .collect::<Result<Vec<_>>>()?
            }
            Net::Grid {
                trunk,
                head4,
                head2,
                head1,
            } => {
                let x = tape.constant(input.clone());
                let f4 = trunk.forward(tape, vars, x)?;
                let f2 = tape.maxpool2(f4)?;
                let f1 = tape.maxpool2(f2)?;
                let p4 = head4.forward(tape, vars, f4)?;
                let p2 = head2.forward(tape, vars, f2)?;
                let p2 = tape.upsample_nearest(p2, 2)?;
                let p1 = head1.forward(tape, vars, f1)?;
                let p1 = tape.upsample_nearest(p1, 4)?;
                let s = tape.add(p4, p2)?;
                let grid = tape.add(s, p1)?;
                let mut cells = Vec::with_capacity(16);
                for r in 0..4 {
                    for c in 0..4 {
                        cells.push(tape.grid_cell(grid, r, c)?);
                    }
                }
                cells
            }
        };
        LogitBundle::new(tape, pathways)
    }

    /// Raw pathway logits for `input`, each `[b×C]`.
    pub fn forward_all(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, input, false)?;
        Ok(f.bundle.pathways().iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Replaces parameters by name; every name and shape must match.
    pub fn load_params(&mut self, params: Vec<Param>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Consistency(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                params.len()
            )));
        }
        for (slot, p) in self.params.iter_mut().zip(params) {
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::Consistency(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    p.name,
                    p.value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = p.value;
        }
        Ok(())
    }
}

/// `n_columns ≥ 2` independent copies of `column`, seeded from `seed`.
pub fn build_m1(n_columns: usize, geometry: Geometry, column: ColumnSpec, seed: u64) -> Result<MultiPathModel> {
    if n_columns < 2 {
        return Err(Error::Config(format!("M1 needs at least 2 columns, got {n_columns}")));
    }
    let seeds = (0..n_columns as u64).map(|j| derive_seed(seed, j)).collect();
    build_m1_with_seeds(geometry, column, seeds, seed)
}

/// A plain single-pathway classifier (an M1 layout with one column).
pub fn build_single_column(geometry: Geometry, column: ColumnSpec, seed: u64) -> Result<MultiPathModel> {
    build_m1_with_seeds(geometry, column, vec![derive_seed(seed, 0)], seed)
}

/// M1 with explicit per-column seeds.
pub fn build_m1_with_seeds(geometry: Geometry, column: ColumnSpec, column_seeds: Vec<u64>, seed: u64) -> Result<MultiPathModel> {
    MultiPathModel::build(&ModelSpec {
        geometry,
        column,
        layout: Layout::M1 { column_seeds },
        seed,
    })
}

pub fn build_m2(geometry: Geometry, column: ColumnSpec, seed: u64) -> Result<MultiPathModel> {
    MultiPathModel::build(&ModelSpec {
        geometry,
        column,
        layout: Layout::M2,
        seed,
    })
}

pub fn build_m3(geometry: Geometry, column: ColumnSpec, seed: u64) -> Result<MultiPathModel> {
    MultiPathModel::build(&ModelSpec {
        geometry,
        column,
        layout: Layout::M3,
        seed,
    })
}

/// One column per region; crops are resized to the full input size.
pub fn build_m4(regions: Vec<Region>, geometry: Geometry, column: ColumnSpec, seed: u64) -> Result<MultiPathModel> {
    MultiPathModel::build(&ModelSpec {
        geometry,
        column,
        layout: Layout::M4 {
            regions,
            column_input: [geometry.height, geometry.width],
        },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g8() -> Geometry {
        Geometry::new(1, 8, 8)
    }

    fn input(b: usize, g: Geometry, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * g.sample_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![b, g.channels, g.height, g.width], data).unwrap()
    }

    #[test]
    fn m1_shapes_and_column_count_errors() {
        let m = build_m1(3, Geometry::new(1, 28, 28), ColumnSpec::mlp(&[16], 10), 0).unwrap();
        let out = m.forward_all(&input(2, m.geometry(), 1)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|t| t.shape() == [2, 10]));
        assert!(matches!(build_m1(1, g8(), ColumnSpec::mlp(&[4], 2), 0), Err(Error::Config(_))));
    }

    #[test]
    fn m1_equal_seeds_give_equal_pathways() {
        let m = build_m1_with_seeds(g8(), ColumnSpec::cnn(&[2, 3], 4), vec![7, 7], 0).unwrap();
        let out = m.forward_all(&input(3, g8(), 2)).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn zero_input_gives_finite_bias_logits() {
        let m = build_m1(2, g8(), ColumnSpec::mlp(&[5, 4], 3), 11).unwrap();
        let out = m.forward_all(&Tensor::zeros(&[2, 1, 8, 8])).unwrap();
        // biases start at zero, so zero input propagates to zero logits
        assert!(out.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn m2_has_three_heads_and_shares_its_trunk() {
        let m = build_m2(g8(), ColumnSpec::cnn(&[2, 3, 4], 5), 3).unwrap();
        assert_eq!(m.pathways(), 3);
        let out = m.forward_all(&input(2, g8(), 5)).unwrap();
        assert!(out.iter().all(|t| t.shape() == [2, 5]));
        assert!(matches!(build_m2(g8(), ColumnSpec::cnn(&[2, 3], 5), 0), Err(Error::Config(_))));
        let mlp = build_m2(g8(), ColumnSpec::mlp(&[6, 5, 4], 3), 0).unwrap();
        assert_eq!(mlp.pathways(), 3);
    }

    #[test]
    fn m3_has_sixteen_pathways_and_rejects_bad_geometry() {
        let m = build_m3(Geometry::new(1, 16, 16), ColumnSpec::cnn(&[2, 3], 4), 0).unwrap();
        assert_eq!(m.pathways(), 16);
        let out = m.forward_all(&input(2, m.geometry(), 1)).unwrap();
        assert_eq!(out.len(), 16);
        assert!(matches!(
            build_m3(Geometry::new(1, 28, 28), ColumnSpec::cnn(&[2, 3], 4), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_m3(Geometry::new(1, 32, 32), ColumnSpec::cnn(&[2, 3], 4), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_m3(Geometry::new(1, 16, 16), ColumnSpec::mlp(&[4], 4), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn m4_region_layouts() {
        let g = Geometry::new(1, 8, 8);
        assert_eq!(Region::default_layout(g).len(), 5);
        assert_eq!(Region::quadtree23(g).len(), 23);
        let m = build_m4(Region::default_layout(g), g, ColumnSpec::mlp(&[4], 3), 0).unwrap();
        assert_eq!(m.pathways(), 5);
        let m = build_m4(
            Region::quadtree23(Geometry::new(1, 28, 28)),
            Geometry::new(1, 28, 28),
            ColumnSpec::mlp(&[2], 3),
            0,
        )
        .unwrap();
        assert_eq!(m.pathways(), 23);
        let bad = vec![Region::new(4, 4, 5, 2)];
        assert!(matches!(build_m4(bad, g, ColumnSpec::mlp(&[4], 3), 0), Err(Error::Config(_))));
    }

    #[test]
    fn m4_full_region_matches_single_m1_column() {
        let g = g8();
        let spec = ColumnSpec::cnn(&[2], 3);
        let m4 = build_m4(vec![Region::full(g)], g, spec.clone(), 9).unwrap();
        let m1 = build_m1_with_seeds(g, spec, vec![derive_seed(9, 0), 1], 9).unwrap();
        let x = input(2, g, 4);
        assert_eq!(m4.forward_all(&x).unwrap()[0], m1.forward_all(&x).unwrap()[0]);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let m = build_m1(2, g8(), ColumnSpec::mlp(&[4], 3), 0).unwrap();
        assert!(matches!(m.forward_all(&Tensor::zeros(&[1, 1, 8, 7])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn shared_trunks_use_fewer_parameters() {
        let g = Geometry::new(1, 16, 16);
        let spec = ColumnSpec::cnn(&[3, 4, 5], 4);
        let m2 = build_m2(g, spec.clone(), 0).unwrap();
        let trunk: usize = (0..3)
            .flat_map(|k| m2.block_params(k))
            .map(|i| m2.params().get(i).value.len())
            .sum();
        let heads: usize = (0..3)
            .flat_map(|j| m2.exclusive_params(j))
            .map(|i| m2.params().get(i).value.len())
            .sum();
        assert_eq!(trunk + heads, m2.param_count());
        assert!(m2.param_count() < 3 * trunk + heads);

        let m3 = build_m3(g, spec, 0).unwrap();
        let head_params: usize = m3
            .params()
            .iter()
            .filter(|p| p.name.starts_with("grid"))
            .map(|p| p.value.len())
            .sum();
        let trunk = m3.param_count() - head_params;
        assert!(m3.param_count() < 16 * trunk);
    }
}
