//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 7 and 11 need the official MNIST IDX files in
//! `$WEAKROUTE_MNIST_DIR` (default `<workspace>/data/mnist`). Without them
//! they report FAIL with the reason but do not fail the process unless
//! `WEAKROUTE_ACCEPTANCE_STRICT=1`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakroute_core::data::{load_idx, normalize, synth_dataset, DatasetSplit, SynthParams};
use weakroute_core::models::{build_m1, build_m2, build_m3, build_m4, ColumnSpec, Geometry, MultiPathModel, Region};
use weakroute_core::stats::{mcnemar, ContingencyTable, McNemarMethod};
use weakroute_core::training::{evaluate, routing_check, train, LossMode, Protocol, TrainConfig, GRADCHECK_TOLERANCE};
use weakroute_core::weakroute::{
    average_loss_baseline, compose_weakest, mean_inference, pseudo_target, strong_inference, weakness, weakroute_loss, LogProbMatrix,
    LogitBundle, LossOptions, TargetBatch,
};
use weakroute_core::{Tape, Tensor};

const ORACLE_TOL: f64 = 1e-9;
const WORKED_TOL: f64 = 1e-6;
const INVARIANCE_TOL: f64 = 1e-12;
const MCNEMAR_P_TOL: f64 = 1e-3;
const EXACT_P_TOL: f64 = 1e-12;
const TREND_MARGIN: f64 = 0.005;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Required input files are absent.
    Unavailable(String),
}

type Check = Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce() -> Outcome>);

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let r = f();
    let took = start.elapsed();
    match r {
        Ok(d) if took <= limit => Outcome::Pass(format!("{d} [{:.1}s]", took.as_secs_f64())),
        Ok(d) => Outcome::Fail(format!("{d} but took {:.1}s > {}s", took.as_secs_f64(), limit.as_secs())),
        Err(e) => Outcome::Fail(format!("{e} [{:.1}s]", took.as_secs_f64())),
    }
}

fn untimed(f: impl FnOnce() -> Check) -> Outcome {
    match f() {
        Ok(d) => Outcome::Pass(d),
        Err(e) => Outcome::Fail(e),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Independent reference: nested loops over [b][i][j], no shared code.

struct Reference {
    lp: Vec<Vec<Vec<f64>>>,
    w: Vec<Vec<Vec<f64>>>,
    sel: Vec<Vec<usize>>,
    v: Vec<Vec<f64>>,
    strong_sel: Vec<usize>,
    strong: Vec<Vec<f64>>,
    mean: Vec<Vec<f64>>,
}

fn weakness_ref(lp: &[Vec<Vec<f64>>], labels: &[usize]) -> Vec<Vec<Vec<f64>>> {
    lp.iter()
        .zip(labels)
        .map(|(rows, &y)| {
            rows.iter()
                .enumerate()
                .map(|(i, r)| {
                    let s: f64 = r.iter().sum();
                    let t = if i == y { 1.0 } else { 0.0 };
                    let sign = if i == y { 1.0 } else { -1.0 };
                    r.iter().map(|u| t + sign * u / s).collect()
                })
                .collect()
        })
        .collect()
}

fn pick(row: &[f64], better: fn(f64, f64) -> bool) -> usize {
    let mut k = 0;
    for j in 1..row.len() {
        if better(row[j], row[k]) {
            k = j;
        }
    }
    k
}

/// `logits[j][b][i]` for pathway `j`.
fn reference(logits: &[Vec<Vec<f64>>], labels: &[usize]) -> Reference {
    let (n, batch, classes) = (logits.len(), logits[0].len(), logits[0][0].len());
    let mut lp = vec![vec![vec![0.0; n]; classes]; batch];
    for (j, path) in logits.iter().enumerate() {
        for (b, row) in path.iter().enumerate() {
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            for i in 0..classes {
                lp[b][i][j] = (row[i].exp() / z).ln();
            }
        }
    }
    let w = weakness_ref(&lp, labels);
    let sel: Vec<Vec<usize>> = w.iter().map(|rows| rows.iter().map(|r| pick(r, |a, b| a > b)).collect()).collect();
    let v = (0..batch).map(|b| (0..classes).map(|i| lp[b][i][sel[b][i]]).collect()).collect();
    let pseudo: Vec<usize> = lp
        .iter()
        .map(|rows| {
            let best: Vec<f64> = rows.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            pick(&best, |a, b| a > b)
        })
        .collect();
    let wp = weakness_ref(&lp, &pseudo);
    let strong_sel: Vec<usize> = wp.iter().flat_map(|rows| rows.iter().map(|r| pick(r, |a, b| a < b))).collect();
    let strong = (0..batch)
        .map(|b| (0..classes).map(|i| lp[b][i][strong_sel[b * classes + i]]).collect())
        .collect();
    let mean = lp
        .iter()
        .map(|rows| rows.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect())
        .collect();
    Reference {
        lp,
        w,
        sel,
        v,
        strong_sel,
        strong,
        mean,
    }
}

fn random_bundle(rng: &mut ChaCha8Rng, n_max: usize, n_min: usize) -> (Vec<Vec<Vec<f64>>>, Vec<usize>) {
    let batch = rng.random_range(1..=8);
    let classes = rng.random_range(2..=5);
    let n = rng.random_range(n_min..=n_max);
    let logits = (0..n)
        .map(|_| {
            (0..batch)
                .map(|_| (0..classes).map(|_| rng.random_range(-8.0..8.0)).collect())
                .collect()
        })
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (logits, labels)
}

fn tensors(logits: &[Vec<Vec<f64>>]) -> Vec<Tensor> {
    logits.iter().map(|p| Tensor::from_rows(p).unwrap()).collect()
}

fn flat3(x: &[Vec<Vec<f64>>]) -> Vec<f64> {
    x.iter().flatten().flatten().copied().collect()
}

fn flat2(x: &[Vec<f64>]) -> Vec<f64> {
    x.iter().flatten().copied().collect()
}

// ---------------------------------------------------------------------------

fn c1_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let (logits, labels) = random_bundle(&mut rng, 4, 1);
        let r = reference(&logits, &labels);
        let lp = LogProbMatrix::from_logits(&tensors(&logits)).map_err(|e| e.to_string())?;
        let target = TargetBatch::from_labels(labels.clone(), lp.classes()).unwrap();
        let w = weakness(&lp, &target).unwrap();
        let v = compose_weakest(&lp, &target).unwrap();
        let s = strong_inference(&lp);
        let m = mean_inference(&lp);
        let sel: Vec<usize> = r.sel.iter().flatten().copied().collect();
        ensure(v.selection.as_ref().unwrap().indices() == sel.as_slice(), || {
            format!("case {case}: selection differs")
        })?;
        ensure(s.selection.as_ref().unwrap().indices() == r.strong_sel.as_slice(), || {
            format!("case {case}: strong selection differs")
        })?;
        for d in [
            max_diff(lp.values(), &flat3(&r.lp)),
            max_diff(w.values(), &flat3(&r.w)),
            max_diff(v.logits.data(), &flat2(&r.v)),
            max_diff(s.logits.data(), &flat2(&r.strong)),
            max_diff(m.logits.data(), &flat2(&r.mean)),
        ] {
            worst = worst.max(d);
        }
        ensure(worst <= ORACLE_TOL, || format!("case {case}: deviation {worst:e}"))?;
    }
    Ok(format!("1000 bundles, max deviation {worst:.1e}"))
}

fn c2_worked_example() -> Check {
    let (a, b) = (-0.1269280110429727, -2.1269280110429727);
    let lp = LogProbMatrix::from_logits(&lp_inputs()).unwrap();
    let target = TargetBatch::from_labels(vec![0], 2).unwrap();
    let w = weakness(&lp, &target).unwrap();
    let v = compose_weakest(&lp, &target).unwrap();
    let s = strong_inference(&lp);
    let m = mean_inference(&lp);
    let checks = [
        ("log-probs", max_diff(lp.values(), &[a, b, b, a])),
        ("weakness", max_diff(w.values(), &[1.056316, 1.943684, -0.943684, -0.056316])),
        ("v", max_diff(v.logits.data(), &[b, a])),
        ("strong", max_diff(s.logits.data(), &[a, b])),
        ("mean", max_diff(m.logits.data(), &[-1.126928, -1.126928])),
    ];
    for (name, d) in checks {
        ensure(d <= WORKED_TOL, || format!("{name} off by {d:e}"))?;
    }
    ensure(v.selection.unwrap().indices() == [1, 1], || "training selection".into())?;
    ensure(s.selection.unwrap().indices() == [0, 0], || "strong selection".into())?;
    ensure(pseudo_target(&lp).labels() == [0], || "pseudo target".into())?;
    let mut tape = Tape::new();
    let p: Vec<_> = lp_inputs().into_iter().map(|t| tape.leaf(t)).collect();
    let bundle = LogitBundle::new(&tape, p).unwrap();
    let loss = weakroute_loss(&mut tape, &bundle, &target, LossOptions::default()).unwrap();
    let d = (tape.value(loss.loss).data()[0] - 2.1269280110429727).abs();
    ensure(d <= WORKED_TOL, || format!("loss off by {d:e}"))?;
    Ok("all values within 1e-6".into())
}

fn lp_inputs() -> Vec<Tensor> {
    vec![
        Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap(),
        Tensor::from_rows(&[vec![0.0, 2.0]]).unwrap(),
    ]
}

fn c3_gradcheck() -> Check {
    let mut parts = Vec::new();
    for topo in ["m1", "m2", "m3", "m4"] {
        let out = Command::new(env!("CARGO_BIN_EXE_weakroute"))
            .args(["gradcheck", "--topology", topo])
            .output()
            .map_err(|e| e.to_string())?;
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| format!("{topo}: bad report: {e}"))?;
        let err = report["max_rel_error"].as_f64().ok_or("missing max_rel_error")?;
        ensure(out.status.success() && err < GRADCHECK_TOLERANCE, || {
            format!("{topo}: max rel error {err:e} ({})", report["worst_parameter"])
        })?;
        parts.push(format!("{topo} {err:.1e}"));
    }
    Ok(parts.join(", "))
}

fn c4_masking() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = Geometry::new(1, 8, 8);
    let model = build_m1(3, g, ColumnSpec::mlp(&[16], 3), 4).unwrap();
    let mut partial = 0;
    for k in 0..100 {
        let batch = rng.random_range(1..=3);
        let images = Tensor::new(vec![batch, 1, 8, 8], (0..batch * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let labels = (0..batch).map(|_| rng.random_range(0..3)).collect();
        let target = TargetBatch::from_labels(labels, 3).unwrap();
        let r = routing_check(&model, &images, &target, LossOptions::default()).map_err(|e| e.to_string())?;
        ensure(r.receiving.is_subset(&r.selected), || format!("batch {k}: {r:?}"))?;
        ensure(!r.receiving.is_empty(), || format!("batch {k}: no gradient"))?;
        partial += usize::from(r.selected.len() < 3);
    }
    Ok(format!("100 batches, {partial} with an unselected pathway"))
}

fn c5_weakness_range() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut count = 0usize;
    while count < 1_000_000 {
        let (logits, labels) = random_bundle(&mut rng, 4, 2);
        let lp = LogProbMatrix::from_logits(&tensors(&logits)).unwrap();
        let [batch, classes, n] = lp.shape();
        let w = weakness(&lp, &TargetBatch::from_labels(labels.clone(), classes).unwrap()).unwrap();
        for (b, &y) in labels.iter().enumerate() {
            for i in 0..classes {
                for j in 0..n {
                    let x = w.get(b, i, j);
                    let inside = if y == i { x > 1.0 && x < 2.0 } else { x > -1.0 && x < 0.0 };
                    ensure(x.is_finite() && inside, || format!("W = {x} (positive: {})", y == i))?;
                }
            }
        }
        count += batch * classes * n;
    }
    Ok(format!("{count} values inside their open intervals"))
}

fn permuted<T: Clone>(xs: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&j| xs[j].clone()).collect()
}

fn c6_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 3];
    for _ in 0..1000 {
        let (logits, labels) = random_bundle(&mut rng, 4, 1);
        let classes = logits[0][0].len();
        let target = TargetBatch::from_labels(labels.clone(), classes).unwrap();
        let lp = LogProbMatrix::from_logits(&tensors(&logits)).unwrap();
        let ops = |lp: &LogProbMatrix| {
            [
                compose_weakest(lp, &target).unwrap().logits,
                strong_inference(lp).logits,
                mean_inference(lp).logits,
            ]
        };
        let base = ops(&lp);

        let shifted: Vec<Vec<Vec<f64>>> = logits
            .iter()
            .map(|p| {
                let s = rng.random_range(-100.0..100.0);
                p.iter().map(|r| r.iter().map(|x| x + s).collect()).collect()
            })
            .collect();
        let lps = LogProbMatrix::from_logits(&tensors(&shifted)).unwrap();
        worst[0] = worst[0].max(max_diff(lps.values(), lp.values()));
        for (a, b) in ops(&lps).iter().zip(&base) {
            worst[0] = worst[0].max(max_diff(a.data(), b.data()));
        }

        let mut perm: Vec<usize> = (0..logits.len()).collect();
        for k in (1..perm.len()).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        let lpp = LogProbMatrix::from_logits(&tensors(&permuted(&logits, &perm))).unwrap();
        for (a, b) in ops(&lpp).iter().zip(&base) {
            worst[1] = worst[1].max(max_diff(a.data(), b.data()));
        }

        let single = &logits[..1];
        let lp1 = LogProbMatrix::from_logits(&tensors(single)).unwrap();
        for out in ops(&lp1) {
            worst[2] = worst[2].max(max_diff(out.data(), lp1.values()));
        }
        let mut tape = Tape::new();
        let p = tape.leaf(tensors(single).remove(0));
        let bundle = LogitBundle::new(&tape, vec![p]).unwrap();
        let routed = weakroute_loss(&mut tape, &bundle, &target, LossOptions::default()).unwrap().loss;
        let avg = average_loss_baseline(&mut tape, &bundle, &target).unwrap();
        worst[2] = worst[2].max((tape.value(routed).data()[0] - tape.value(avg).data()[0]).abs());
    }
    let names = ["shift", "permutation", "N=1 collapse"];
    for (name, w) in names.iter().zip(worst) {
        ensure(w <= INVARIANCE_TOL, || format!("{name}: deviation {w:e}"))?;
    }
    Ok(format!(
        "1000 cases; max deviation shift {:.1e}, permutation {:.1e}, collapse {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("WEAKROUTE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).unwrap().join("data/mnist"))
}

fn mnist_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// `(train, test)` or the reason they cannot be loaded.
fn mnist() -> Result<Result<(DatasetSplit, DatasetSplit), String>, String> {
    let dir = mnist_dir();
    let files: Vec<_> = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .map(|s| mnist_file(&dir, s).ok_or(*s))
    .collect();
    if let Some(Err(missing)) = files.iter().find(|f| f.is_err()) {
        return Err(format!("MNIST file {missing} not found in {}", dir.display()));
    }
    let f: Vec<PathBuf> = files.into_iter().map(Result::unwrap).collect();
    let load = || -> weakroute_core::Result<_> { Ok((load_idx(&f[0], &f[1])?, load_idx(&f[2], &f[3])?)) };
    Ok(load().map_err(|e| e.to_string()))
}

fn c7_trend() -> Outcome {
    let (train_split, test_split) = match mnist() {
        Err(e) => return Outcome::Unavailable(e),
        Ok(Err(e)) => return Outcome::Fail(e),
        Ok(Ok(d)) => d,
    };
    timed(Duration::from_secs(15 * 60), || {
        let (tr, stats) = normalize(&train_split.take(5000), None).map_err(|e| e.to_string())?;
        let (te, _) = normalize(&test_split, Some(&stats)).map_err(|e| e.to_string())?;
        let mut wins = 0;
        let mut rows = Vec::new();
        for seed in 0..3u64 {
            let run = |mode| -> Result<f64, String> {
                let mut m = build_m1(3, tr.geometry(), ColumnSpec::mlp(&[64], 10), seed).map_err(|e| e.to_string())?;
                let cfg = TrainConfig {
                    epochs: 20,
                    loss_mode: mode,
                    seed,
                    ..TrainConfig::default()
                };
                let out = train(&mut m, &tr, &te, &cfg).map_err(|e| e.to_string())?;
                Ok(evaluate(&out.best, &te, Protocol::Mean).map_err(|e| e.to_string())?.accuracy)
            };
            let (w, b) = (run(LossMode::Weakroute)?, run(LossMode::AverageBaseline)?);
            ensure(w >= b - TREND_MARGIN, || {
                format!("seed {seed}: weakroute {:.2}% < baseline {:.2}% - 0.5pp", 100.0 * w, 100.0 * b)
            })?;
            wins += usize::from(w > b);
            rows.push(format!("seed {seed} {:.2}/{:.2}", 100.0 * w, 100.0 * b));
        }
        ensure(wins >= 2, || format!("weakroute ahead on {wins}/3 seeds ({})", rows.join(", ")))?;
        Ok(format!("weakroute/baseline % {}", rows.join(", ")))
    })
}

fn c8_separability() -> Check {
    let g = Geometry::new(1, 16, 16);
    let data = synth_dataset(&SynthParams {
        classes: 4,
        per_class: 8,
        geometry: g,
        noise: 0.0,
        seed: 8,
    })
    .map_err(|e| e.to_string())?;
    let models: Vec<MultiPathModel> = vec![
        build_m1(3, g, ColumnSpec::mlp(&[16], 4), 8).unwrap(),
        build_m2(g, ColumnSpec::cnn(&[4, 8, 8], 4), 8).unwrap(),
        build_m3(g, ColumnSpec::cnn(&[4, 8], 4), 8).unwrap(),
        build_m4(Region::default_layout(g), g, ColumnSpec::mlp(&[16], 4), 8).unwrap(),
    ];
    let mut parts = Vec::new();
    for mut m in models {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 8,
            ..TrainConfig::default()
        };
        let out = train(&mut m, &data, &data, &cfg).map_err(|e| e.to_string())?;
        let first = out.metrics.iter().find(|e| e.train_acc == 1.0);
        let topo = m.topology();
        let e = first.ok_or_else(|| format!("{topo}: best train accuracy {}", out.metrics[out.best_epoch].train_acc))?;
        parts.push(format!("{topo} epoch {}", e.epoch));
    }
    Ok(format!("100% train accuracy: {}", parts.join(", ")))
}

fn c9_mcnemar() -> Check {
    let t = ContingencyTable {
        n00: 0,
        n01: 15,
        n10: 5,
        n11: 0,
    };
    let r = mcnemar(&t);
    ensure((r.statistic - 4.05).abs() < 1e-12, || format!("statistic {}", r.statistic))?;
    ensure((r.p_value - 0.0441).abs() < MCNEMAR_P_TOL, || format!("p {}", r.p_value))?;
    ensure(r.method == McNemarMethod::Chi2Cc, || "expected chi-square".into())?;
    let e = mcnemar(&ContingencyTable {
        n00: 0,
        n01: 3,
        n10: 1,
        n11: 0,
    });
    ensure((e.p_value - 0.625).abs() < EXACT_P_TOL, || format!("exact p {}", e.p_value))?;
    ensure(e.method == McNemarMethod::ExactBinomial, || "expected exact test".into())?;
    ensure(mcnemar(&t.swapped()) == r, || "asymmetric under swap".into())?;
    Ok(format!("chi2 {:.4} p {:.6}; exact p {}", r.statistic, r.p_value, e.p_value))
}

fn c10_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let cfg = dir.path().join(format!("{name}.toml"));
        let text = format!(
            "[model]\ncolumns = 3\nhidden = [16]\n\n[data]\nsource = \"synth\"\nclasses = 4\nper_class = 20\ntest_per_class = 10\n\
             height = 12\nwidth = 12\n\n[train]\nepochs = 4\nbatch_size = 16\nseed = 3\n\n[output]\ndir = \"{name}\"\n"
        );
        std::fs::write(&cfg, text).map_err(|e| e.to_string())?;
        let out = Command::new(env!("CARGO_BIN_EXE_weakroute"))
            .arg("train")
            .arg(&cfg)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        std::fs::read(dir.path().join(name).join("metrics.csv")).map_err(|e| e.to_string())
    };
    let (a, b) = (run("a")?, run("b")?);
    ensure(a == b, || "metrics.csv differs between runs".into())?;
    Ok(format!("metrics.csv identical ({} bytes)", a.len()))
}

fn c11_idx() -> Outcome {
    let (train_split, test_split) = match mnist() {
        Err(e) => return Outcome::Unavailable(e),
        Ok(Err(e)) => return Outcome::Fail(e),
        Ok(Ok(d)) => d,
    };
    untimed(|| {
        for (name, s, n) in [("train", &train_split, 60_000), ("test", &test_split, 10_000)] {
            let g = s.geometry();
            ensure(s.len() == n, || format!("{name}: {} samples, expected {n}", s.len()))?;
            ensure((g.channels, g.height, g.width) == (1, 28, 28), || format!("{name}: geometry {g:?}"))?;
            ensure(s.labels().iter().all(|&y| y < 10), || format!("{name}: label out of range"))?;
        }
        Ok("60000/10000 samples, 28x28, labels in [0,10)".into())
    })
}

fn main() -> ExitCode {
    // The harness passes libtest flags; list mode must not run anything.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let strict = std::env::var("WEAKROUTE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: Vec<Criterion> = vec![
        ("oracle equivalence", Box::new(|| timed(Duration::from_secs(10), c1_oracle))),
        ("worked example", Box::new(|| untimed(c2_worked_example))),
        ("gradient fidelity", Box::new(|| timed(Duration::from_secs(120), c3_gradcheck))),
        ("gradient masking", Box::new(|| untimed(c4_masking))),
        ("weakness range", Box::new(|| untimed(c5_weakness_range))),
        ("invariance suite", Box::new(|| untimed(c6_invariance))),
        ("desk-scale trend", Box::new(c7_trend)),
        ("separability", Box::new(|| timed(Duration::from_secs(300), c8_separability))),
        ("mcnemar", Box::new(|| untimed(c9_mcnemar))),
        ("determinism", Box::new(|| untimed(c10_determinism))),
        ("idx ingestion", Box::new(c11_idx)),
    ];
    let (mut failed, mut unavailable) = (0, 0);
    for (k, (name, run)) in criteria.into_iter().enumerate() {
        match run() {
            Outcome::Pass(d) => println!("PASS {:>2} {name}: {d}", k + 1),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", k + 1);
            }
            Outcome::Unavailable(d) => {
                unavailable += 1;
                println!("FAIL {:>2} {name}: data unavailable: {d}", k + 1);
            }
        }
    }
    println!("acceptance: {failed} failed, {unavailable} without data");
    if failed > 0 || (strict && unavailable > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
