use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use flowseg_core::affinity::build_transition;
use flowseg_core::evaluation::{dataset_miou, score_image, ImageScore};
use flowseg_core::io::{self, FloatPrecision, LabelFormat};
use flowseg_core::markov_flow::{FlowParams, TraceRecord};
use flowseg_core::pipeline::{segment_traced, Segmentation};
use flowseg_core::projective::empirical_flow_contraction;
use flowseg_core::propagation::upsample_labels;
use flowseg_core::synthetic::{gen_planted_graph, BundledFixture, PlantedPartitionSpec};
use flowseg_core::{FeatureMap, LabelMap, SegmentationConfig};

use crate::args::{
    DiagnoseArgs, EvalArgs, LabelFormatArg, SegmentArgs, SweepArgs, SweepParam, SynthArgs,
};
use crate::config::{self, Resolved};
use crate::error::CliError;

fn resolve(args: &crate::args::ConfigArgs, verbose: bool) -> Result<Resolved, CliError> {
    let resolved = config::resolve(args)?;
    if verbose {
        eprint!("{}", resolved.describe());
    }
    Ok(resolved)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Files in `dir` (not recursive) whose extension is one of `exts`, by stem.
fn files_by_stem(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(CliError::io(dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
        })
        .collect();
    paths.sort();
    for p in paths {
        let s = stem(&p);
        if let Some(prev) = out.get(&s) {
            eprintln!(
                "warning: {} shadows {}; using the first",
                p.display(),
                prev.display()
            );
            continue;
        }
        out.insert(s, p);
    }
    Ok(out)
}

fn to_json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("records serialize")
}

#[derive(Debug, Serialize)]
struct FlowSummary {
    iterations: usize,
    residual: f64,
    converged: bool,
    clusters: usize,
    candidate_attractors: usize,
}

#[derive(Debug, Serialize)]
struct PropagationSummary {
    iterations: usize,
    residual: f64,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    input: String,
    height: usize,
    width: usize,
    channels: usize,
    config: &'a SegmentationConfig,
    flow: FlowSummary,
    propagation: PropagationSummary,
    labels: String,
    upsampled: Option<String>,
    trace: Option<String>,
}

struct Outcome {
    k: usize,
    converged: bool,
    labels: PathBuf,
}

fn segment_one(
    input: &Path,
    args: &SegmentArgs,
    cfg: &SegmentationConfig,
) -> Result<Outcome, CliError> {
    let features = io::read_features(input)?;
    let upsample = args.upsample.as_ref().map(|v| (v[0], v[1]));
    if let Some((h, w)) = upsample {
        if h < features.height() || w < features.width() {
            return Err(CliError::Usage(format!(
                "--upsample {h} {w} is smaller than the {}x{} label grid",
                features.height(),
                features.width()
            )));
        }
    }
    let mut trace = Vec::new();
    let seg = segment_traced(&features, cfg, |r| trace.push(r))?;

    // Encode everything before touching the output directory.
    let format = match args.format {
        LabelFormatArg::Pgm => LabelFormat::Pgm,
        LabelFormatArg::Npy => LabelFormat::Npy,
    };
    let encode = |lm: &LabelMap| {
        io::encode_labels(lm, format).map_err(|kind| {
            CliError::Core(flowseg_core::Error::Format {
                path: input.to_path_buf(),
                kind,
            })
        })
    };
    let label_bytes = encode(&seg.labels)?;
    let up = match upsample {
        Some((h, w)) => Some(encode(&upsample_labels(&seg.labels, h, w)?)?),
        None => None,
    };

    let name = stem(input);
    let label_name = format!("{name}.{}", format.extension());
    let label_path = args.out.join(&label_name);
    write(&label_path, &label_bytes)?;
    if args.png {
        io::write_labels_png(&seg.labels, args.out.join(format!("{name}.png")))?;
    }
    let upsampled = match up {
        Some(bytes) => {
            let dir = args.out.join("upsampled");
            create_dir(&dir)?;
            write(&dir.join(&label_name), &bytes)?;
            Some(format!("upsampled/{label_name}"))
        }
        None => None,
    };
    let trace_name = if args.trace {
        let name = format!("{name}.trace.jsonl");
        let body: String = trace
            .iter()
            .map(|r: &TraceRecord| to_json_line(r) + "\n")
            .collect();
        write(&args.out.join(&name), body.as_bytes())?;
        Some(name)
    } else {
        None
    };
    let manifest = manifest(
        input, &features, cfg, &seg, label_name, upsampled, trace_name,
    );
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(
        &args.out.join(format!("{name}.manifest.json")),
        text.as_bytes(),
    )?;
    Ok(Outcome {
        k: seg.k(),
        converged: seg.flow.converged && seg.propagation.converged,
        labels: label_path,
    })
}

fn manifest<'a>(
    input: &Path,
    f: &FeatureMap,
    cfg: &'a SegmentationConfig,
    seg: &Segmentation,
    labels: String,
    upsampled: Option<String>,
    trace: Option<String>,
) -> Manifest<'a> {
    Manifest {
        input: file_name(input),
        height: f.height(),
        width: f.width(),
        channels: f.channels(),
        config: cfg,
        flow: FlowSummary {
            iterations: seg.flow.iterations,
            residual: seg.flow.residual,
            converged: seg.flow.converged,
            clusters: seg.k(),
            candidate_attractors: seg.flow.clusters.candidate_attractors,
        },
        propagation: PropagationSummary {
            iterations: seg.propagation.iterations,
            residual: seg.propagation.residual,
            converged: seg.propagation.converged,
        },
        labels,
        upsampled,
        trace,
    }
}

pub fn segment(args: &SegmentArgs, verbose: bool) -> Result<(), CliError> {
    let resolved = resolve(&args.cfg, verbose)?;
    let meta = fs::metadata(&args.input).map_err(CliError::io(&args.input))?;
    let inputs: Vec<PathBuf> = if meta.is_dir() {
        files_by_stem(&args.input, &["npy"])?
            .into_values()
            .collect()
    } else {
        vec![args.input.clone()]
    };
    if inputs.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no .npy feature files",
            args.input.display()
        )));
    }
    create_dir(&args.out)?;
    let results: Vec<Result<Outcome, CliError>> = inputs
        .par_iter()
        .map(|p| segment_one(p, args, &resolved.config))
        .collect();

    let mut first_err = None;
    let mut stalled = Vec::new();
    for (input, result) in inputs.iter().zip(results) {
        match result {
            Ok(o) => {
                println!(
                    "{}",
                    json!({
                        "input": input.display().to_string(),
                        "labels": o.labels.display().to_string(),
                        "clusters": o.k,
                        "converged": o.converged,
                    })
                );
                if !o.converged {
                    stalled.push(file_name(input));
                }
            }
            Err(e) => {
                if inputs.len() > 1 {
                    eprintln!("error: {}: {e}", input.display());
                }
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if !stalled.is_empty() {
        return Err(CliError::NotConverged(format!(
            "did not converge within max_flow_iters ({}) or max_prop_iters ({}) for {}",
            resolved.config.max_flow_iters,
            resolved.config.max_prop_iters,
            stalled.join(", ")
        )));
    }
    Ok(())
}

fn align(pred: LabelMap, gt: &LabelMap) -> Result<LabelMap, CliError> {
    if (pred.height(), pred.width()) == (gt.height(), gt.width()) {
        Ok(pred)
    } else {
        Ok(upsample_labels(&pred, gt.height(), gt.width())?)
    }
}

#[derive(Debug, Serialize)]
struct ImageRecord<'a> {
    stem: &'a str,
    miou: f64,
    k_pred: usize,
    k_gt: usize,
    mapping: &'a [usize],
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let preds = files_by_stem(&args.pred_dir, &["pgm", "npy"])?;
    let gts = files_by_stem(&args.gt_dir, &["pgm", "npy"])?;
    let unmatched: Vec<&String> = preds
        .keys()
        .filter(|s| !gts.contains_key(*s))
        .chain(gts.keys().filter(|s| !preds.contains_key(*s)))
        .collect();
    for s in &unmatched {
        eprintln!("warning: `{s}` has no counterpart; skipped");
    }
    let stems: Vec<&String> = preds.keys().filter(|s| gts.contains_key(*s)).collect();
    if stems.is_empty() {
        return Err(CliError::Usage(format!(
            "no common file stems between {} and {}",
            args.pred_dir.display(),
            args.gt_dir.display()
        )));
    }
    let scores: Vec<ImageScore> = stems
        .par_iter()
        .map(|s| {
            let gt = io::read_labels(&gts[*s])?;
            let pred = align(io::read_labels(&preds[*s])?, &gt)?;
            Ok(score_image(&pred, &gt, args.ignore_id)?)
        })
        .collect::<Result<_, CliError>>()?;

    let mut lines = Vec::new();
    for (s, sc) in stems.iter().zip(&scores) {
        lines.push(to_json_line(&ImageRecord {
            stem: s,
            miou: sc.miou,
            k_pred: sc.k_pred,
            k_gt: sc.k_gt,
            mapping: &sc.mapping,
        }));
    }
    let mean = scores.iter().map(|s| s.miou).sum::<f64>() / scores.len() as f64;
    let pooled = dataset_miou(&scores);
    lines.push(
        json!({
            "summary": {
                "images": scores.len(),
                "miou": if args.dataset_level { pooled } else { mean },
                "mean_image_miou": mean,
                "dataset_miou": pooled,
                "skipped": unmatched,
            }
        })
        .to_string(),
    );
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    print!("{body}");
    let results = args
        .results
        .clone()
        .unwrap_or_else(|| args.pred_dir.join("eval.jsonl"));
    write(&results, body.as_bytes())
}

pub fn diagnose(args: &DiagnoseArgs, seed: u64, verbose: bool) -> Result<(), CliError> {
    let cfg = resolve(&args.cfg, verbose)?.config;
    let p0 = match &args.features {
        Some(path) => build_transition(&io::read_features(path)?, &cfg)?,
        None => {
            let spec = PlantedPartitionSpec {
                block_sizes: args.blocks.clone(),
                within_mean: args.within,
                cross_mean: args.cross,
                noise: args.noise,
                seed,
            };
            gen_planted_graph(&spec)?.0
        }
    };
    let mut params = FlowParams::from(&cfg);
    if args.no_prune {
        params.prune_tau = 0.0;
    }
    let report = empirical_flow_contraction(&p0, &params, args.pairs, seed)?;
    print!("{}", report.to_text());
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write(path, text.as_bytes())?;
    }
    Ok(())
}

fn fixture(name: &str) -> Result<BundledFixture, CliError> {
    BundledFixture::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = BundledFixture::ALL.iter().map(|f| f.name()).collect();
        CliError::Usage(format!(
            "unknown fixture `{name}` (known: {})",
            known.join(", ")
        ))
    })
}

pub fn synth(args: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let fx = fixture(&args.fixture)?;
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let noise = args.noise.unwrap_or(fx.default_noise());
    let (fdir, gdir) = (args.out.join("features"), args.out.join("gt"));
    let precision = if args.f32 {
        FloatPrecision::F32
    } else {
        FloatPrecision::F64
    };
    let fixtures = (0..args.count)
        .map(|i| fx.generate_seeded(noise, seed + i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(&fdir)?;
    create_dir(&gdir)?;
    for (i, f) in fixtures.iter().enumerate() {
        let name = if args.count == 1 {
            fx.name().to_string()
        } else {
            format!("{}-{i:03}", fx.name())
        };
        let fpath = fdir.join(format!("{name}.npy"));
        let gpath = gdir.join(format!("{name}.pgm"));
        io::write_features(&f.features, &fpath, precision)?;
        io::write_labels(&f.truth, &gpath, LabelFormat::Pgm)?;
        println!(
            "{}",
            json!({
                "features": fpath.display().to_string(),
                "gt": gpath.display().to_string(),
                "seed": seed + i as u64,
                "noise": noise,
            })
        );
    }
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let grid = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("--grid: `{s}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if grid.is_empty() {
        return Err(CliError::Usage("--grid needs at least one value".into()));
    }
    Ok(grid)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    param: &'static str,
    value: f64,
    clusters: Vec<usize>,
    mean_clusters: f64,
    dataset_miou: f64,
    mean_image_miou: f64,
    not_converged: usize,
}

pub fn sweep(args: &SweepArgs, seed: u64, verbose: bool) -> Result<(), CliError> {
    let grid = parse_grid(&args.grid)?;
    let base = resolve(&args.cfg, verbose)?.config;
    let items: Vec<(FeatureMap, LabelMap)> = match &args.dataset {
        Some(dir) => {
            let feats = files_by_stem(&dir.join("features"), &["npy"])?;
            let gts = files_by_stem(&dir.join("gt"), &["pgm", "npy"])?;
            let mut items = Vec::new();
            for (s, fp) in &feats {
                match gts.get(s) {
                    Some(gp) => items.push((io::read_features(fp)?, io::read_labels(gp)?)),
                    None => eprintln!("warning: `{s}` has no ground truth; skipped"),
                }
            }
            if items.is_empty() {
                return Err(CliError::Usage(format!(
                    "{}: no usable items",
                    dir.display()
                )));
            }
            items
        }
        None => {
            let fx = fixture(args.fixture.as_deref().unwrap_or("ablation-four-blob"))?;
            let f = fx.generate_seeded(args.noise.unwrap_or(fx.default_noise()), seed)?;
            vec![(f.features, f.truth)]
        }
    };
    let name = match args.param {
        SweepParam::Beta => "beta",
        SweepParam::InflationR => "inflation_r",
    };
    let mut rows = Vec::new();
    for &value in &grid {
        let mut cfg = base.clone();
        match args.param {
            SweepParam::Beta => cfg.beta = value,
            SweepParam::InflationR => cfg.inflation_r = value,
        }
        cfg.validate()?;
        let runs: Vec<(usize, bool, ImageScore)> = items
            .par_iter()
            .map(|(f, gt)| {
                let seg = segment_traced(f, &cfg, |_| {})?;
                let pred = align(seg.labels.clone(), gt)?;
                Ok((
                    seg.k(),
                    seg.flow.converged,
                    score_image(&pred, gt, args.ignore_id)?,
                ))
            })
            .collect::<Result<_, CliError>>()?;
        let scores: Vec<ImageScore> = runs.iter().map(|r| r.2.clone()).collect();
        let clusters: Vec<usize> = runs.iter().map(|r| r.0).collect();
        rows.push(SweepRow {
            param: name,
            value,
            mean_clusters: clusters.iter().sum::<usize>() as f64 / clusters.len() as f64,
            clusters,
            dataset_miou: dataset_miou(&scores),
            mean_image_miou: scores.iter().map(|s| s.miou).sum::<f64>() / scores.len() as f64,
            not_converged: runs.iter().filter(|r| !r.1).count(),
        });
    }
    println!(
        "{:>12} {:>8} {:>8} {:>14}",
        name, "K", "mIoU", "not converged"
    );
    for r in &rows {
        println!(
            "{:>12} {:>8.2} {:>8.4} {:>14}",
            r.value, r.mean_clusters, r.dataset_miou, r.not_converged
        );
    }
    if let Some(path) = &args.json {
        let body: String = rows.iter().map(|r| to_json_line(r) + "\n").collect();
        write(path, body.as_bytes())?;
    }
    Ok(())
}
