//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weakroute_core::data::{load_idx, normalize, synth_dataset, DatasetSplit, NormalizationStats, SynthParams};
use weakroute_core::models::{
    build_single_column, derive_seed, ColumnKind, ColumnSpec, Geometry, Layout, ModelSpec, MultiPathModel, Region, Topology,
};
use weakroute_core::training::{Protocol, TrainConfig};
use weakroute_core::Error;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Mlp,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionLayout {
    /// Full image plus the four quadrants.
    Default,
    Quadtree23,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub topology: Topology,
    /// M1 column count; 1 builds a plain single-pathway classifier.
    pub columns: usize,
    /// Defaults to `cnn` for M3 and `mlp` otherwise.
    pub column: Option<ColumnType>,
    /// Dense widths (MLP columns, or M2 trunk blocks).
    pub hidden: Option<Vec<usize>>,
    /// Convolution channels (CNN columns, or M2/M3 trunk blocks).
    pub channels: Option<Vec<usize>>,
    pub regions: RegionLayout,
    /// `[height, width]` of M4 column inputs; defaults to the image size.
    pub column_input: Option<[usize; 2]>,
    /// Initialization seed; defaults to `train.seed`.
    pub seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            topology: Topology::M1,
            columns: 3,
            column: None,
            hidden: None,
            channels: None,
            regions: RegionLayout::Default,
            column_input: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synth(SynthConfig),
    Idx(IdxConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    pub seed: u64,
    pub normalize: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 50,
            test_per_class: 20,
            channels: 1,
            height: 16,
            width: 16,
            noise: 0.3,
            seed: 0,
            normalize: true,
        }
    }
}

impl SynthConfig {
    fn params(&self, split: Split) -> SynthParams {
        let (per_class, seed) = match split {
            Split::Train => (self.per_class, self.seed),
            Split::Test => (self.test_per_class, derive_seed(self.seed, 1)),
        };
        SynthParams {
            classes: self.classes,
            per_class,
            geometry: Geometry::new(self.channels, self.height, self.width),
            noise: self.noise,
            seed,
        }
    }

    pub fn load(&self, split: Split) -> Result<DatasetSplit, Error> {
        synth_dataset(&self.params(split))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Keep only the first `n` training samples.
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub test_subset: Option<usize>,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Protocols printed in the end-of-run summary.
    pub protocols: Vec<Protocol>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            protocols: vec![Protocol::Strong, Protocol::Mean, Protocol::PerPathway],
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::input(format!("{}: {}", origin.display(), e.message().trim())))
    }

    /// Reads a TOML config, or the config snapshot of a run manifest (`.json`).
    /// Relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let snapshot = v
                .get("config")
                .ok_or_else(|| CliError::input(format!("{}: no `config` snapshot", path.display())))?;
            serde_json::from_value(snapshot.clone()).map_err(|e| CliError::input(format!("{}: config: {e}", path.display())))?
        } else {
            Self::from_toml(&text, path)?
        };
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let base = std::path::absolute(&base).unwrap_or(base);
        absolutize(&base, &mut cfg.output.dir);
        if let DataConfig::Idx(idx) = &mut cfg.data {
            for p in [
                &mut idx.train_images,
                &mut idx.train_labels,
                &mut idx.test_images,
                &mut idx.test_labels,
            ] {
                absolutize(&base, p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.output.protocols.is_empty() {
            return Err(CliError::input("output.protocols: list at least one protocol"));
        }
        if self.model.columns == 0 {
            return Err(CliError::input("model.columns: must be at least 1"));
        }
        Ok(())
    }

    /// Fills every model default from the topology, so the snapshot is explicit.
    pub fn resolved(mut self) -> Self {
        let m = &mut self.model;
        let column = *m.column.get_or_insert(match m.topology {
            Topology::M3 => ColumnType::Cnn,
            _ => ColumnType::Mlp,
        });
        match column {
            ColumnType::Mlp => {
                m.hidden.get_or_insert_with(|| match m.topology {
                    Topology::M2 => vec![64, 64, 64],
                    _ => vec![64],
                });
            }
            ColumnType::Cnn => {
                m.channels.get_or_insert_with(|| match m.topology {
                    Topology::M2 => vec![8, 16, 16],
                    _ => vec![8, 16],
                });
            }
        }
        m.seed.get_or_insert(self.train.seed);
        self
    }

    pub fn column_spec(&self, classes: usize) -> Result<ColumnSpec, CliError> {
        let m = &self.model;
        let kind = match m.column.unwrap_or(ColumnType::Mlp) {
            ColumnType::Mlp => ColumnKind::Mlp {
                hidden: m.hidden.clone().ok_or_else(|| CliError::input("model.hidden: missing"))?,
            },
            ColumnType::Cnn => ColumnKind::Cnn {
                channels: m.channels.clone().ok_or_else(|| CliError::input("model.channels: missing"))?,
            },
        };
        Ok(ColumnSpec { kind, classes })
    }

    pub fn build_model(&self, geometry: Geometry, classes: usize) -> Result<MultiPathModel, CliError> {
        let m = &self.model;
        let column = self.column_spec(classes)?;
        let seed = m.seed.unwrap_or(self.train.seed);
        let layout = match m.topology {
            Topology::M1 if m.columns == 1 => return Ok(build_single_column(geometry, column, seed)?),
            Topology::M1 => Layout::M1 {
                column_seeds: (0..m.columns as u64).map(|j| derive_seed(seed, j)).collect(),
            },
            Topology::M2 => Layout::M2,
            Topology::M3 => Layout::M3,
            Topology::M4 => Layout::M4 {
                regions: match m.regions {
                    RegionLayout::Default => Region::default_layout(geometry),
                    RegionLayout::Quadtree23 => Region::quadtree23(geometry),
                },
                column_input: m.column_input.unwrap_or([geometry.height, geometry.width]),
            },
        };
        Ok(MultiPathModel::build(&ModelSpec {
            geometry,
            column,
            layout,
            seed,
        })?)
    }
}

/// Train and test splits after normalization.
pub struct PreparedData {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub stats: Option<NormalizationStats>,
}

impl DataConfig {
    pub fn prepare(&self) -> Result<PreparedData, CliError> {
        let (train, test, norm) = match self {
            DataConfig::Synth(s) => (s.load(Split::Train)?, s.load(Split::Test)?, s.normalize),
            DataConfig::Idx(c) => {
                for p in [&c.train_images, &c.train_labels, &c.test_images, &c.test_labels] {
                    if !p.is_file() {
                        return Err(CliError::input(format!("data: file not found: {}", p.display())));
                    }
                }
                let mut train = load_idx(&c.train_images, &c.train_labels)?;
                let mut test = load_idx(&c.test_images, &c.test_labels)?;
                if let Some(n) = c.train_subset {
                    train = train.take(n);
                }
                if let Some(n) = c.test_subset {
                    test = test.take(n);
                }
                (train, test, c.normalize)
            }
        };
        if !norm {
            return Ok(PreparedData { train, test, stats: None });
        }
        let (train, stats) = normalize(&train, None)?;
        let (test, _) = normalize(&test, Some(&stats))?;
        Ok(PreparedData {
            train,
            test,
            stats: Some(stats),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::from_toml(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_synth_config_takes_defaults() {
        let c = parse("[data]\nsource = \"synth\"\n").unwrap().resolved();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.model.hidden, Some(vec![64]));
        assert_eq!(c.model.seed, Some(0));
        assert!(matches!(c.data, DataConfig::Synth(ref s) if *s == SynthConfig::default()));
    }

    #[test]
    fn data_source_is_required() {
        assert!(parse("[train]\nepochs = 2\n").is_err());
        assert!(parse("[data]\nclasses = 2\n").is_err());
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = parse("[data]\nsource = \"synth\"\n[train]\nepoch = 2\n").unwrap_err();
        assert!(err.message.contains("epoch"), "{}", err.message);
        assert!(parse("[data]\nsource = \"synth\"\nclases = 3\n").is_err());
    }

    #[test]
    fn topology_defaults_differ() {
        let c = parse("[model]\ntopology = \"m3\"\n[data]\nsource = \"synth\"\n")
            .unwrap()
            .resolved();
        assert_eq!(c.model.column, Some(ColumnType::Cnn));
        assert_eq!(c.model.channels, Some(vec![8, 16]));
        let m = c.build_model(Geometry::new(1, 16, 16), 10).unwrap();
        assert_eq!(m.pathways(), 16);
    }

    #[test]
    fn single_column_m1() {
        let c = parse("[model]\ncolumns = 1\n[data]\nsource = \"synth\"\n").unwrap().resolved();
        assert_eq!(c.build_model(Geometry::new(1, 8, 8), 3).unwrap().pathways(), 1);
    }

    #[test]
    fn snapshot_round_trips_through_json() {
        let c = parse("[model]\ntopology = \"m4\"\nregions = \"quadtree23\"\n[data]\nsource = \"synth\"\nnoise = 0.0\n")
            .unwrap()
            .resolved();
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(serde_json::from_value::<ExperimentConfig>(v).unwrap(), c);
    }
}
