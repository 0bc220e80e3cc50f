use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use banet::analysis::{self, count_macs, MacBreakdown};
use banet::io::{self, DisparityFile};
use banet::metrics::{MetricReport, MetricTally};
use banet::{init_random, Model, Shape, Tensor, Variant, WeightStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::{BenchArgs, DataError, DisparityFormat, EvalArgs, InferArgs, InitArgs, MacsArgs, ReportFormat, EXIT_OK};

type Outcome = Result<i32, DataError>;

fn emit(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), DataError> {
    writeln!(out, "{value}")?;
    Ok(())
}

pub fn infer(a: &InferArgs, out: &mut dyn Write) -> Outcome {
    let variant = a.variant.variant();
    let (left, right) = io::load_image_pair(&a.left, &a.right)?;
    let store = WeightStore::load(&a.weights)?;
    let model = Model::new(variant.config(), &store)?;
    if a.out_attention.is_some() && model.config().attention_spec().is_none() {
        return Err(DataError(format!("the {} variant has no attention map to write", variant.label())));
    }
    let result = model.forward(&left, &right)?;
    let d1 = DisparityFile::from_tensor(result.d1.tensor())?;
    match a.format {
        DisparityFormat::Pfm => io::write_pfm(&a.out_disparity, &d1)?,
        DisparityFormat::Kitti => io::write_kitti_png(&a.out_disparity, &d1)?,
    }
    if let (Some(path), Some(att)) = (&a.out_attention, &result.attention) {
        io::write_gray8_png(path, att.tensor())?;
    }
    let (min, max) = result.d1.tensor().min_max();
    emit(
        out,
        &json!({
            "variant": variant.label(),
            "width": d1.width,
            "height": d1.height,
            "min": min,
            "max": max,
            "mean": result.d1.tensor().mean(),
            "disparity": a.out_disparity,
            "attention": a.out_attention,
            "diagnostics": result.diagnostics,
        }),
    )?;
    Ok(EXIT_OK)
}

fn is_disparity(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("pfm" | "png"))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Files of a directory keyed by stem.
fn listing(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<BTreeMap<String, PathBuf>, DataError> {
    let mut files = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| DataError(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| DataError(format!("{}: {e}", dir.display())))?.path();
        if path.is_file() && keep(&path) {
            if let Some(previous) = files.insert(stem(&path), path.clone()) {
                return Err(DataError(format!(
                    "{} and {} share the stem {:?}",
                    previous.display(),
                    path.display(),
                    stem(&path)
                )));
            }
        }
    }
    Ok(files)
}

struct Pair {
    name: String,
    pred: PathBuf,
    gt: PathBuf,
    mask: Option<PathBuf>,
}

fn pairs(a: &EvalArgs) -> Result<Vec<Pair>, DataError> {
    match (a.pred.is_dir(), a.gt.is_dir()) {
        (false, false) => {
            if a.mask.as_deref().is_some_and(Path::is_dir) {
                return Err(DataError("a mask directory needs prediction and ground-truth directories".into()));
            }
            Ok(vec![Pair { name: stem(&a.pred), pred: a.pred.clone(), gt: a.gt.clone(), mask: a.mask.clone() }])
        }
        (true, true) => {
            let pred = listing(&a.pred, is_disparity)?;
            let gt = listing(&a.gt, is_disparity)?;
            let masks = match &a.mask {
                Some(m) if m.is_dir() => Some(listing(m, |_| true)?),
                _ => None,
            };
            let mut orphans: Vec<String> = pred
                .keys()
                .filter(|k| !gt.contains_key(*k))
                .map(|k| format!("{} (no ground truth)", pred[k].display()))
                .chain(
                    gt.keys()
                        .filter(|k| !pred.contains_key(*k))
                        .map(|k| format!("{} (no prediction)", gt[k].display())),
                )
                .collect();
            let names: Vec<&String> = pred.keys().filter(|k| gt.contains_key(*k)).collect();
            if let Some(m) = &masks {
                orphans.extend(names.iter().filter(|k| !m.contains_key(**k)).map(|k| format!("{k} (no mask)")));
            }
            if !orphans.is_empty() {
                return Err(DataError(format!("unmatched files: {}", orphans.join(", "))));
            }
            if names.is_empty() {
                return Err(DataError(format!(
                    "no prediction in {} matches a ground-truth file in {}",
                    a.pred.display(),
                    a.gt.display()
                )));
            }
            Ok(names
                .into_iter()
                .map(|k| Pair {
                    name: k.clone(),
                    pred: pred[k].clone(),
                    gt: gt[k].clone(),
                    mask: match &masks {
                        Some(m) => Some(m[k].clone()),
                        None => a.mask.clone(),
                    },
                })
                .collect())
        }
        _ => Err(DataError("--pred and --gt must both be files or both be directories".into())),
    }
}

fn measure(p: &Pair) -> Result<MetricTally, DataError> {
    let pred = io::read_disparity(&p.pred)?;
    let gt = io::read_disparity(&p.gt)?;
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(DataError(format!(
            "{}: prediction is {}x{} but ground truth {} is {}x{}",
            p.name,
            pred.width,
            pred.height,
            p.gt.display(),
            gt.width,
            gt.height
        )));
    }
    let mask = match &p.mask {
        Some(path) => {
            let (w, h, m) = io::read_mask(path)?;
            if (w, h) != (gt.width, gt.height) {
                return Err(DataError(format!(
                    "{}: mask is {w}x{h}, expected {}x{}",
                    path.display(),
                    gt.width,
                    gt.height
                )));
            }
            Some(m)
        }
        None => None,
    };
    MetricTally::measure(&pred.values, &gt, mask.as_deref()).map_err(|e| DataError(format!("{}: {e}", p.name)))
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> Outcome {
    let pairs = pairs(a)?;
    let region = a.mask.as_ref().map(|_| a.region.as_str());
    let tallies = pairs.par_iter().map(measure).collect::<Result<Vec<_>, _>>()?;
    let mut total = MetricTally::default();
    let mut reports: Vec<(String, MetricReport)> = Vec::with_capacity(pairs.len());
    for (p, t) in pairs.iter().zip(&tallies) {
        total.merge(t);
        reports.push((p.name.clone(), t.report(region)?));
    }
    let aggregate = total.report(region)?;
    match a.format {
        ReportFormat::Json => emit(
            out,
            &json!({
                "files": reports.iter().map(|(n, r)| json!({ "name": n, "report": r })).collect::<Vec<_>>(),
                "aggregate": aggregate,
            }),
        )?,
        ReportFormat::Csv => {
            writeln!(out, "{}", MetricReport::CSV_HEADER)?;
            for (n, r) in &reports {
                writeln!(out, "{}", r.csv_row(n))?;
            }
            writeln!(out, "{}", aggregate.csv_row("aggregate"))?;
        }
    }
    Ok(EXIT_OK)
}

pub fn macs(a: &MacsArgs, out: &mut dyn Write) -> Outcome {
    if a.height == 0 || a.width == 0 {
        return Err(DataError("input size must be positive".into()));
    }
    let variants: Vec<Variant> = if a.all { Variant::ALL.to_vec() } else { vec![a.variant.variant()] };
    let reports: Vec<(Variant, MacBreakdown)> =
        variants.into_iter().map(|v| (v, count_macs(&v.config(), a.height, a.width))).collect();
    if a.json {
        let list: Vec<_> = reports.iter().map(|(v, b)| json!({ "variant": v.label(), "breakdown": b })).collect();
        emit(out, &json!(list))?;
    } else {
        for (v, b) in &reports {
            writeln!(out, "{}\n{}", v.label(), b.table())?;
        }
    }
    Ok(EXIT_OK)
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.gen_range(-2.0..2.0))
}

pub fn bench(a: &BenchArgs, env_threads: Option<usize>, out: &mut dyn Write) -> Outcome {
    let variant = a.variant.variant();
    let cfg = variant.config();
    let store = match &a.weights {
        Some(path) => WeightStore::load(path)?,
        None => init_random(&cfg, a.seed)?,
    };
    let model = Model::new(cfg, &store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let left = random_image(a.height, a.width, &mut rng);
    let right = random_image(a.height, a.width, &mut rng);
    let threads = if a.parallel { env_threads.unwrap_or(0) } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let report = pool.install(|| analysis::bench(&model, &left, &right, a.warmup, a.iters as usize))?;
    let mode = if a.parallel { "parallel" } else { "single-thread" };
    if a.json {
        emit(out, &json!({ "variant": variant.label(), "mode": mode, "report": report }))?;
    } else {
        writeln!(
            out,
            "{} {}x{}, {mode} ({} threads), {} iters after {} warm-up, {} MACs",
            variant.label(),
            a.width,
            a.height,
            report.threads,
            report.iters,
            report.warmup,
            report.macs
        )?;
        writeln!(out, "{:<12} {:>12} {:>12}", "stage", "median ms", "p95 ms")?;
        for s in report.stages.iter().chain([&report.end_to_end]) {
            writeln!(out, "{:<12} {:>12.3} {:>12.3}", s.name, s.median_ms, s.p95_ms)?;
        }
    }
    Ok(EXIT_OK)
}

pub fn init_weights(a: &InitArgs, out: &mut dyn Write) -> Outcome {
    let variant = a.variant.variant();
    let store = init_random(&variant.config(), a.seed)?;
    store.save(&a.out)?;
    emit(
        out,
        &json!({
            "variant": variant.label(),
            "seed": a.seed,
            "path": a.out,
            "tensors": store.len(),
            "scalars": store.scalar_count(),
        }),
    )?;
    Ok(EXIT_OK)
}
