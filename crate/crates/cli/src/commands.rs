//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use weakroute_core::data::{load_idx, normalize, DatasetSplit, NormalizationStats};
use weakroute_core::models::{load_checkpoint, save_checkpoint, Checkpoint, Param, Topology};
use weakroute_core::stats::{compare_runs, RunPredictions};
use weakroute_core::tensor::Tensor;
use weakroute_core::training::{
    evaluate, gradcheck_topology, predict, train_with, EpochMetrics, Predictions, Protocol, GRADCHECK_TOLERANCE,
};

use crate::config::{ExperimentConfig, Split, SynthConfig};
use crate::plot::delta_chart_svg;
use crate::CliError;

const MANIFEST: &str = "manifest.json";
const METRICS: &str = "metrics.csv";
const CHECKPOINT: &str = "best.ckpt";
const PREDICTIONS: &str = "predictions.csv";
const NORM_MEAN: &str = "input.norm_mean";
const NORM_STD: &str = "input.norm_std";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

/// Prints a report line; a closed stdout (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Serialize)]
struct OutputFile {
    name: &'static str,
    role: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    bytes: Option<u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: Vec<String>,
    seed: u64,
    status: &'static str,
    started_unix: u64,
    finished_unix: Option<u64>,
    best_epoch: Option<usize>,
    error: Option<String>,
    files: Vec<OutputFile>,
    config: &'a ExperimentConfig,
}

impl Manifest<'_> {
    fn write(&mut self, dir: &Path) -> Result<(), CliError> {
        for f in &mut self.files {
            f.bytes = std::fs::metadata(dir.join(f.name)).ok().map(|m| m.len());
        }
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

fn stats_extras(stats: &NormalizationStats) -> Vec<Param> {
    vec![
        Param {
            name: NORM_MEAN.into(),
            value: Tensor::vector(stats.mean.clone()),
        },
        Param {
            name: NORM_STD.into(),
            value: Tensor::vector(stats.std.clone()),
        },
    ]
}

fn write_predictions(path: &Path, labels: &[usize], p: &Predictions) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    let mut header = String::from("index,label,strong,mean");
    for j in 0..p.per_pathway.len() {
        header.push_str(&format!(",pathway_{j}"));
    }
    let mut out = header + "\n";
    for (i, &y) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{y},{},{}", p.strong[i], p.mean[i]));
        for col in &p.per_pathway {
            out.push_str(&format!(",{}", col[i]));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn train(config_path: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?.resolved();
    let data = cfg.data.prepare()?;
    let mut model = cfg.build_model(data.train.geometry(), data.train.classes())?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

    let mut manifest = Manifest {
        tool: "weakroute",
        version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().skip(1).collect(),
        seed: cfg.train.seed,
        status: "running",
        started_unix: unix_now(),
        finished_unix: None,
        best_epoch: None,
        error: None,
        files: vec![
            OutputFile {
                name: MANIFEST,
                role: "run manifest",
                bytes: None,
            },
            OutputFile {
                name: METRICS,
                role: "per-epoch metrics",
                bytes: None,
            },
            OutputFile {
                name: CHECKPOINT,
                role: "best-train-accuracy checkpoint",
                bytes: None,
            },
            OutputFile {
                name: PREDICTIONS,
                role: "test predictions of the best checkpoint",
                bytes: None,
            },
        ],
        config: &cfg,
    };
    manifest.write(&dir)?;

    let metrics_path = dir.join(METRICS);
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?);
    writeln!(metrics, "{}", EpochMetrics::csv_header(model.pathways())).map_err(|e| io_err(&metrics_path, e))?;
    let outcome = train_with(&mut model, &data.train, &data.test, &cfg.train, |m| {
        writeln!(metrics, "{}", m.csv_row())
            .and_then(|_| metrics.flush())
            .map_err(|e| weakroute_core::Error::io(&metrics_path, e))?;
        eprintln!(
            "epoch {:>3}  loss {:.5}  train {:.4}  strong {:.4}  mean {:.4}",
            m.epoch, m.loss, m.train_acc, m.test_strong, m.test_mean
        );
        Ok(())
    });
    drop(metrics);
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            manifest.status = "failed";
            manifest.error = Some(e.to_string());
            manifest.finished_unix = Some(unix_now());
            manifest.write(&dir)?;
            return Err(e.into());
        }
    };

    let extras = data.stats.as_ref().map(stats_extras).unwrap_or_default();
    save_checkpoint(&dir.join(CHECKPOINT), &outcome.best, &extras)?;
    let pred = predict(&outcome.best, &data.test)?;
    write_predictions(&dir.join(PREDICTIONS), data.test.labels(), &pred)?;

    manifest.status = "completed";
    manifest.best_epoch = Some(outcome.best_epoch);
    manifest.finished_unix = Some(unix_now());
    manifest.write(&dir)?;

    let best = &outcome.metrics[outcome.best_epoch];
    let mut test = serde_json::Map::new();
    for &p in &cfg.output.protocols {
        let e = pred.accuracy(p, data.test.labels())?;
        test.insert(p.to_string(), serde_json::to_value(e).expect("serializable"));
    }
    let summary = json!({
        "output_dir": dir,
        "best_epoch": outcome.best_epoch,
        "train_acc": best.train_acc,
        "test": test,
    });
    emit(&serde_json::to_string_pretty(&summary).expect("serializable"));
    Ok(())
}

fn synth_from_descriptor(spec: &str) -> Result<(SynthConfig, Split), CliError> {
    let mut split = Split::Test;
    let mut lines = Vec::new();
    for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("synth descriptor: expected key=value, got {pair:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "split" {
            split = match v {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(CliError::input(format!("synth descriptor: unknown split {other:?}"))),
            };
        } else {
            lines.push(format!("{k} = {v}"));
        }
    }
    let cfg = toml::from_str::<SynthConfig>(&lines.join("\n"))
        .map_err(|e| CliError::input(format!("synth descriptor: {}", e.message().trim())))?;
    Ok((cfg, split))
}

fn infer_labels(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    [("images-idx3", "labels-idx1"), ("images.idx3", "labels.idx1"), ("images", "labels")]
        .iter()
        .filter(|(from, _)| name.contains(from))
        .map(|(from, to)| images.with_file_name(name.replace(from, to)))
        .find(|p| p.is_file())
}

fn eval_data(data: &str, labels: Option<&Path>) -> Result<DatasetSplit, CliError> {
    if let Some(desc) = data.strip_prefix("synth:") {
        let (cfg, split) = synth_from_descriptor(desc)?;
        return Ok(cfg.load(split)?);
    }
    let images = PathBuf::from(data);
    if !images.is_file() {
        return Err(CliError::input(format!("data: file not found: {}", images.display())));
    }
    let labels = match labels {
        Some(l) => l.to_path_buf(),
        None => infer_labels(&images)
            .ok_or_else(|| CliError::input(format!("cannot infer a label file for {}; pass --labels", images.display())))?,
    };
    Ok(load_idx(&images, &labels)?)
}

fn checkpoint_stats(ck: &Checkpoint) -> Result<Option<NormalizationStats>, CliError> {
    match (ck.extra(NORM_MEAN), ck.extra(NORM_STD)) {
        (Some(m), Some(s)) => Ok(Some(NormalizationStats {
            mean: m.data().to_vec(),
            std: s.data().to_vec(),
        })),
        (None, None) => Ok(None),
        _ => Err(CliError::input("checkpoint holds only half of its normalization statistics")),
    }
}

pub fn eval(checkpoint: &Path, data: &str, protocol: Protocol, labels: Option<&Path>, topology: Option<Topology>) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    if let Some(t) = topology {
        if ck.model.topology() != t {
            return Err(CliError::input(format!(
                "checkpoint {} holds a {} model, not {t}",
                checkpoint.display(),
                ck.model.topology()
            )));
        }
    }
    let mut split = eval_data(data, labels)?;
    if let Some(stats) = checkpoint_stats(&ck)? {
        split = normalize(&split, Some(&stats))?.0;
    }
    let e = evaluate(&ck.model, &split, protocol)?;
    emit(&serde_json::to_string(&e).expect("serializable"));
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn parse_usize(field: &str, path: &Path, line: usize) -> Result<usize, CliError> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("{}:{line}: bad integer {field:?}", path.display())))
}

fn read_predictions(dir: &Path) -> Result<RunPredictions, CliError> {
    let path = dir.join(PREDICTIONS);
    let text = read_text(&path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("index,label,strong,mean") {
        return Err(CliError::input(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut run = RunPredictions {
        labels: Vec::new(),
        strong: Vec::new(),
        mean: Vec::new(),
    };
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(CliError::input(format!("{}:{}: too few fields", path.display(), k + 2)));
        }
        run.labels.push(parse_usize(f[1], &path, k + 2)?);
        run.strong.push(parse_usize(f[2], &path, k + 2)?);
        run.mean.push(parse_usize(f[3], &path, k + 2)?);
    }
    Ok(run)
}

/// Best train accuracy recorded in a run's metrics file.
fn read_best_train_acc(dir: &Path) -> Result<f64, CliError> {
    let path = dir.join(METRICS);
    let text = read_text(&path)?;
    let mut lines = text.lines();
    if !lines.next().unwrap_or_default().starts_with("epoch,loss,train_acc") {
        return Err(CliError::input(format!("{}: not a metrics file", path.display())));
    }
    let mut best = f64::NAN;
    for (k, line) in lines.enumerate() {
        let acc: f64 = line
            .split(',')
            .nth(2)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::input(format!("{}:{}: bad train_acc", path.display(), k + 2)))?;
        best = best.max(acc);
    }
    if best.is_nan() {
        return Err(CliError::input(format!("{}: no epochs recorded", path.display())));
    }
    Ok(best)
}

pub fn compare(run_a: &Path, run_b: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let train_a = read_best_train_acc(run_a)?;
    let train_b = read_best_train_acc(run_b)?;
    let a = read_predictions(run_a)?;
    let b = read_predictions(run_b)?;
    let rows = compare_runs(&a, &b)?;
    let report = json!({
        "run_a": run_a,
        "run_b": run_b,
        "n": a.labels.len(),
        "best_train_acc_a": train_a,
        "best_train_acc_b": train_b,
        "protocols": rows,
    });
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_a.join("comparison"));
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    let json_path = out.join("comparison.json");
    std::fs::write(&json_path, format!("{text}\n")).map_err(|e| io_err(&json_path, e))?;
    let svg_path = out.join("comparison.svg");
    let bars: Vec<(String, f64)> = rows.iter().map(|r| (r.protocol.clone(), 100.0 * r.delta)).collect();
    let title = format!("Accuracy of {} minus {}", display_name(run_a), display_name(run_b));
    std::fs::write(&svg_path, delta_chart_svg(&title, &bars)).map_err(|e| io_err(&svg_path, e))?;
    emit(&text);
    Ok(())
}

fn display_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn gradcheck(topology: Topology, seed: u64) -> Result<(), CliError> {
    let r = gradcheck_topology(topology, seed)?;
    emit(&serde_json::to_string_pretty(&r).expect("serializable"));
    if r.passed {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "max relative error {:e} in {} is not below {GRADCHECK_TOLERANCE:e}",
            r.report.max_rel_error, r.worst_parameter
        )))
    }
}
