//! Command handlers.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, RunConfig};
use crate::dataset::{self, meta_path, DatasetMeta};
use crate::{Cli, Command, GenotypeSource, SplitArg, StatsArgs};

use edgenas::arch_graph::{build_arch_graph, GraphStats};
use edgenas::design_space::{dgcnn_preset, DesignSpace, Genotype};
use edgenas::mem_model::{estimate_peak_memory, robust_peak_memory, simulate_memory_trace};
use edgenas::predictor::{
    evaluate, hash_split, init_model, load_weights, predict, save_weights, train, warm_start,
    TargetMetric, WeightsMeta, WEIGHTS_MAGIC,
};
use edgenas::search::{
    correlation, resolve_accuracy_eval, run_search, HwEvalKind, HwEvaluator, SearchResult,
};
use edgenas::{Real, RealModelWeights};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = config::load_config(cli.config.as_deref())?;
    let seed = cli.seed;
    let json = cli.json;
    match cli.command {
        Command::GenDataset { count, out } => gen_dataset(&cfg, count, seed, &out, json),
        Command::TrainPredictor {
            dataset,
            out,
            target,
            device,
            warm_start,
            epochs,
        } => train_predictor(
            &cfg,
            &dataset,
            &out,
            target.map(Into::into),
            device.as_deref(),
            warm_start.as_deref(),
            epochs,
            seed,
            json,
        ),
        Command::EvalPredictor {
            weights,
            dataset,
            split,
            bounds,
        } => eval_predictor(&cfg, &weights, &dataset, split, bounds, json),
        Command::Predict {
            weights,
            genotype,
            device,
            stats,
        } => predict_cmd(&cfg, &weights, &genotype, &device, stats, json),
        Command::EstimateMem { genotype, stats } => estimate_mem(&cfg, &genotype, stats, json),
        Command::Search { out } => search_cmd(&cfg, seed, out.as_deref(), json),
        Command::AnalyzeCorrelation { input } => analyze_correlation(&input, json),
        Command::Inspect { input, stats } => inspect(&cfg, &input, stats, json),
        Command::PresetExport { out } => preset_export(out.as_deref()),
    }
}

fn emit<T: Serialize>(json: bool, machine: &T, human: impl FnOnce()) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(machine)?);
    } else {
        human();
    }
    Ok(())
}

fn resolve_stats(cfg: &RunConfig, args: &StatsArgs) -> Result<GraphStats> {
    let mut stats = cfg.stats;
    if let Some(v) = args.points {
        stats.num_points = v;
    }
    if let Some(v) = args.k {
        stats.neighbors_per_node = v;
    }
    if let Some(v) = args.dim {
        stats.input_feature_dim = v;
    }
    if let Some(v) = args.batch {
        stats.batch_size = v;
    }
    if let Some(v) = args.weight_precision {
        stats.weight_precision = v;
    }
    if let Some(v) = args.index_precision {
        stats.index_precision = v;
    }
    stats.validate()?;
    Ok(stats)
}

fn resolve_genotype(source: &GenotypeSource) -> Result<Genotype> {
    match (&source.genotype, &source.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading genotype {}", path.display()))?;
            Ok(Genotype::from_json(text.trim())?)
        }
        (None, Some(name)) if name == "dgcnn" => Ok(dgcnn_preset()),
        (None, Some(name)) => bail!("unknown preset {name}; available: dgcnn"),
        (None, None) => bail!("provide --genotype <path> or --preset dgcnn"),
        (Some(_), Some(_)) => unreachable!("clap forbids both"),
    }
}

fn warn_rejects(rejects: &[(usize, String)]) {
    for (line, reason) in rejects {
        eprintln!("warning: line {line} rejected: {reason}");
    }
}

fn gen_dataset(
    cfg: &RunConfig,
    count: usize,
    seed: Option<u64>,
    out: &Path,
    json: bool,
) -> Result<()> {
    let seed = seed.unwrap_or(cfg.seed);
    let meta = dataset::gen_dataset(cfg, count, seed, out)?;
    emit(json, &meta, || {
        println!(
            "wrote {count} records for devices {:?} to {} (seed {seed}, config {})",
            meta.devices,
            out.display(),
            &meta.config_hash[..12]
        );
    })
}

#[allow(clippy::too_many_arguments)]
fn train_predictor(
    cfg: &RunConfig,
    dataset_path: &Path,
    out: &Path,
    target: Option<TargetMetric>,
    device: Option<&str>,
    warm_start_path: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
    json: bool,
) -> Result<()> {
    let (records, rejects) = dataset::read_records(dataset_path)?;
    warn_rejects(&rejects);
    let target = target.unwrap_or(cfg.train.target);
    let labeled = dataset::to_labeled_dataset(&records, device, None)?;

    let mut tc = cfg.train.to_config(target);
    if let Some(epochs) = epochs {
        tc.epochs = epochs;
    }
    if let Some(seed) = seed {
        tc.seed = seed;
    }

    let model = match warm_start_path {
        None => {
            let pcfg = cfg.predictor.to_config(labeled.devices.len());
            init_model::<Real>(&pcfg, edgenas::seeds::derive_seed(tc.seed, "init", 0))?
        }
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("reading weights {}", path.display()))?;
            let (source, source_meta) = load_weights::<Real, _>(std::io::BufReader::new(file))?;
            if source_meta.devices != labeled.devices {
                bail!(
                    "warm-start device list {:?} does not match the dataset's {:?}",
                    source_meta.devices,
                    labeled.devices
                );
            }
            let target_shape = cfg.predictor.to_config(labeled.devices.len());
            let fresh = init_model::<Real>(&target_shape, 0)?;
            warm_start(&fresh, &source)?
        }
    };

    let (trained, history) = train(model, &labeled, &tc)?;
    let meta = WeightsMeta {
        devices: labeled.devices.clone(),
        target: Some(target),
        config_hash: Some(cfg.config_hash()),
        tool_version: edgenas::TOOL_VERSION.into(),
    };
    let file = std::fs::File::create(out)
        .with_context(|| format!("creating weights {}", out.display()))?;
    save_weights(&trained, &meta, std::io::BufWriter::new(file))?;

    let last = history.last().expect("at least one epoch");
    let summary = json!({
        "out": out.display().to_string(),
        "target": target,
        "devices": labeled.devices,
        "samples": labeled.len(),
        "epochs": history.len(),
        "final_train_mape": last.train_mape,
        "final_val_mape": last.val_mape,
        "config_hash": cfg.config_hash(),
    });
    emit(json, &summary, || {
        println!(
            "trained {:?} predictor on {} samples ({} epochs): train MAPE {:.4}, val MAPE {:.4}",
            target,
            labeled.len(),
            history.len(),
            last.train_mape,
            last.val_mape
        );
        println!("weights written to {}", out.display());
    })
}

fn eval_predictor(
    cfg: &RunConfig,
    weights: &Path,
    dataset_path: &Path,
    split: SplitArg,
    bounds: Option<Vec<f64>>,
    json: bool,
) -> Result<()> {
    let file = std::fs::File::open(weights)
        .with_context(|| format!("reading weights {}", weights.display()))?;
    let (model, meta) = load_weights::<Real, _>(std::io::BufReader::new(file))?;
    let (records, rejects) = dataset::read_records(dataset_path)?;
    warn_rejects(&rejects);
    let labeled = dataset::to_labeled_dataset(&records, None, Some(&meta.devices))?;
    let subset = match split {
        SplitArg::All => labeled,
        SplitArg::Train => hash_split(&labeled, cfg.train.split_fraction).0,
        SplitArg::Val => hash_split(&labeled, cfg.train.split_fraction).1,
    };
    let target = meta.target.unwrap_or(cfg.train.target);
    let bounds = bounds.unwrap_or_else(|| vec![0.01, 0.05, 0.10]);
    let report = evaluate(&model, &subset, target, &bounds)?;
    let machine = json!({
        "target": target,
        "samples": subset.len(),
        "mape": report.mape,
        "bounds": report.bounds,
    });
    emit(json, &machine, || {
        println!(
            "{:?} on {} samples: MAPE {:.4}",
            target,
            subset.len(),
            report.mape
        );
        for bound in &report.bounds {
            println!(
                "  within {:>5.1}%: {:.1}%",
                bound.bound * 100.0,
                bound.fraction * 100.0
            );
        }
    })
}

fn predict_cmd(
    cfg: &RunConfig,
    weights: &Path,
    source: &GenotypeSource,
    device: &str,
    stats: StatsArgs,
    json: bool,
) -> Result<()> {
    let file = std::fs::File::open(weights)
        .with_context(|| format!("reading weights {}", weights.display()))?;
    let (model, meta) = load_weights::<Real, _>(std::io::BufReader::new(file))?;
    let device_index = meta
        .devices
        .iter()
        .position(|d| d == device)
        .with_context(|| format!("model knows devices {:?}, not {device}", meta.devices))?;
    let stats = resolve_stats(cfg, &stats)?;
    let genotype = resolve_genotype(source)?.canonicalize();
    let graph = build_arch_graph::<Real>(&genotype, &stats)?;
    let predicted = predict(&model, &graph, device_index)?;
    let target = meta.target.unwrap_or(cfg.train.target);

    let mut machine = json!({
        "device": device,
        "target": target,
        "predicted": predicted,
    });
    let mut robust_line = None;
    if target == TargetMetric::PeakMemory {
        let estimated = estimate_peak_memory(&genotype, &stats);
        let robust = robust_peak_memory(predicted.max(0.0).round() as u64, estimated);
        machine["estimated_bytes"] = json!(estimated);
        machine["robust_bytes"] = json!(robust);
        robust_line = Some((estimated, robust));
    }
    emit(json, &machine, || {
        match target {
            TargetMetric::Latency => println!("predicted latency on {device}: {predicted:.4} ms"),
            TargetMetric::PeakMemory => {
                println!("predicted peak memory on {device}: {predicted:.0} bytes");
                if let Some((estimated, robust)) = robust_line {
                    println!("closed-form estimate: {estimated} bytes");
                    println!("robust (max of both): {robust} bytes");
                }
            }
        };
    })
}

fn estimate_mem(cfg: &RunConfig, source: &GenotypeSource, stats: StatsArgs, json: bool) -> Result<()> {
    let stats = resolve_stats(cfg, &stats)?;
    let genotype = resolve_genotype(source)?.canonicalize();
    let trace = simulate_memory_trace(&genotype, &stats);
    let estimate = estimate_peak_memory(&genotype, &stats);
    let machine = json!({
        "stats": stats,
        "genotype": genotype,
        "base_bytes": trace.base_bytes,
        "steps": trace.steps,
        "message_construction_peaks": trace.message_construction_peaks,
        "peak_bytes": estimate,
        "peak_mib": trace.peak_mib(),
    });
    emit(json, &machine, || {
        println!(
            "{:<9} {:<42} {:>14} {:>14} {:>15}",
            "position", "operation", "delta_bytes", "running_bytes", "transient_bytes"
        );
        println!("{:<9} {:<42} {:>14} {:>14} {:>15}", "-", "load model + data", trace.base_bytes, trace.base_bytes, trace.base_bytes);
        for step in &trace.steps {
            let position = step
                .position
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".into());
            println!(
                "{:<9} {:<42} {:>14} {:>14} {:>15}",
                position, step.label, step.bytes_delta, step.running_total, step.transient_peak
            );
        }
        println!(
            "peak: {} bytes ({:.3} MiB)",
            estimate,
            trace.peak_mib()
        );
    })
}

/// Search result wrapper persisted by the `search` command.
#[derive(Serialize)]
struct SearchReport {
    result: SearchResult,
    config_hash: String,
    tool_version: String,
}

fn search_cmd(cfg: &RunConfig, seed: Option<u64>, out: Option<&Path>, json: bool) -> Result<()> {
    let mut scfg = cfg.search.to_config(cfg.stats);
    if let Some(seed) = seed {
        scfg.seed = seed;
    }
    scfg.validate()?;
    let space = DesignSpace::new(cfg.space.clone())?;
    let acc_eval = resolve_accuracy_eval(&scfg.accuracy_eval)?;

    // Loaded up front so the evaluator can borrow them.
    let profile = cfg.device_profile(&scfg.device).ok();
    #[allow(unused_assignments)]
    let mut latency_model: Option<(RealModelWeights, WeightsMeta)> = None;
    let mut memory_model: Option<RealModelWeights> = None;
    let evaluator = match scfg.hw_eval {
        HwEvalKind::CostModel => {
            let profile = profile
                .as_ref()
                .with_context(|| format!("device {} is not configured", scfg.device))?;
            HwEvaluator::CostModel { profile }
        }
        HwEvalKind::Predictor => {
            let lat_path = cfg
                .search
                .latency_weights
                .as_ref()
                .context("search.latency_weights is required for hw_eval = \"predictor\"")?;
            let file = std::fs::File::open(lat_path)
                .with_context(|| format!("reading weights {lat_path}"))?;
            let loaded = load_weights::<Real, _>(std::io::BufReader::new(file))?;
            if let Some(mem_path) = &cfg.search.memory_weights {
                let file = std::fs::File::open(mem_path)
                    .with_context(|| format!("reading weights {mem_path}"))?;
                let (model, meta) = load_weights::<Real, _>(std::io::BufReader::new(file))?;
                if meta.devices != loaded.1.devices {
                    bail!(
                        "memory model devices {:?} differ from latency model devices {:?}",
                        meta.devices,
                        loaded.1.devices
                    );
                }
                memory_model = Some(model);
            }
            latency_model = Some(loaded);
            let (model, meta) = latency_model.as_ref().expect("just set");
            let device_index = meta
                .devices
                .iter()
                .position(|d| *d == scfg.device)
                .with_context(|| {
                    format!("model knows devices {:?}, not {}", meta.devices, scfg.device)
                })?;
            HwEvaluator::Predictor {
                latency_model: model,
                memory_model: memory_model.as_ref(),
                device_index,
                profile: profile.as_ref(),
            }
        }
    };

    let result = run_search(&space, &scfg, acc_eval.as_ref(), &evaluator)?;
    let report = SearchReport {
        result,
        config_hash: cfg.config_hash(),
        tool_version: edgenas::TOOL_VERSION.into(),
    };
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    emit(json, &report, || {
        let result = &report.result;
        if !result.feasible {
            println!("search finished infeasible: no candidate met the constraints");
        }
        if let Some(best) = &result.best {
            println!("best genotype: {}", best.to_json_line());
        }
        println!("best score: {:.6}", result.best_score);
        if let Some(acc) = result.accuracy {
            println!("accuracy: {acc:.4}");
        }
        if let Some(metrics) = &result.metrics {
            println!(
                "latency: {:.4} ms, peak memory: {:.0} bytes{}",
                metrics.latency_ms,
                metrics.peak_mem_bytes,
                metrics
                    .energy_mj
                    .map(|e| format!(", energy: {e:.2} mJ"))
                    .unwrap_or_default()
            );
        }
        if let Some(stage1) = &result.stage1 {
            println!(
                "stage-1 functions (score {:.4}): upper {:?} / lower {:?}",
                stage1.score, stage1.upper, stage1.lower
            );
        }
        println!(
            "evaluations: {} (seed {}, config {})",
            result.evaluated_count,
            result.seed,
            &report.config_hash[..12]
        );
        if let Some(path) = out {
            println!("report written to {}", path.display());
        }
    })
}

fn analyze_correlation(input: &Path, json: bool) -> Result<()> {
    let (records, rejects) = dataset::read_records(input)?;
    warn_rejects(&rejects);
    if records.len() < 2 {
        bail!("need at least 2 records to correlate");
    }
    // Only devices present on every record form well-defined columns.
    let mut devices: Vec<String> = records[0].labels.keys().cloned().collect();
    devices.retain(|d| records.iter().all(|r| r.labels.contains_key(d)));
    if devices.is_empty() {
        bail!("no device is labeled on every record");
    }
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for device in &devices {
        let label = |r: &dataset::ArchitectureRecord| r.labels[device].clone();
        columns.push((
            format!("{device}.latency_ms"),
            records.iter().map(|r| label(r).latency_ms).collect(),
        ));
        columns.push((
            format!("{device}.peak_mem_bytes"),
            records.iter().map(|r| label(r).peak_mem_bytes as f64).collect(),
        ));
        if records.iter().all(|r| label(r).energy_mj.is_some()) {
            columns.push((
                format!("{device}.energy_mj"),
                records.iter().map(|r| label(r).energy_mj.unwrap()).collect(),
            ));
        }
    }
    let names: Vec<&String> = columns.iter().map(|(n, _)| n).collect();
    let matrix: Vec<Vec<Option<f64>>> = columns
        .iter()
        .map(|(_, xs)| {
            columns
                .iter()
                .map(|(_, ys)| correlation(xs, ys).ok())
                .collect()
        })
        .collect();
    let machine = json!({
        "records": records.len(),
        "columns": names,
        "matrix": matrix,
    });
    emit(json, &machine, || {
        let width = names.iter().map(|n| n.len()).max().unwrap_or(8).max(8);
        print!("{:>width$} ", "");
        for name in &names {
            print!("{name:>width$} ");
        }
        println!();
        for (row_name, row) in names.iter().zip(&matrix) {
            print!("{row_name:>width$} ");
            for value in row {
                match value {
                    Some(r) => print!("{r:>width$.3} "),
                    None => print!("{:>width$} ", "undef"),
                }
            }
            println!();
        }
    })
}

fn inspect(cfg: &RunConfig, input: &Path, stats: StatsArgs, json: bool) -> Result<()> {
    let bytes =
        std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    if bytes.starts_with(WEIGHTS_MAGIC) {
        let (model, meta) = load_weights::<Real, _>(bytes.as_slice())?;
        let params: usize = model.tensors().iter().map(|t| t.len()).sum();
        let machine = json!({
            "kind": "weights",
            "config": model.config,
            "target_scale": model.target_scale,
            "parameters": params,
            "devices": meta.devices,
            "target": meta.target,
            "config_hash": meta.config_hash,
            "tool_version": meta.tool_version,
        });
        return emit(json, &machine, || {
            let target = meta
                .target
                .map(|t| format!("{t:?}"))
                .unwrap_or_else(|| "unlabeled".into());
            println!(
                "weights: {target} predictor, {params} parameters, devices {:?}",
                meta.devices
            );
            println!(
                "gcn dims {:?}, mlp dims {:?}, encoding v{}",
                model.config.gcn_dims, model.config.mlp_dims, model.config.encoding_version
            );
            println!(
                "config hash: {}, tool version: {}",
                meta.config_hash.as_deref().unwrap_or("absent"),
                meta.tool_version
            );
        });
    }

    let text = String::from_utf8_lossy(&bytes);
    // Reports and genotypes are single JSON documents; datasets are JSONL
    // where only the first line parses on its own.
    let first_line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let value: serde_json::Value = serde_json::from_str(&text)
        .or_else(|_| serde_json::from_str(first_line))
        .with_context(|| {
            format!("{} is neither a weights container nor JSON", input.display())
        })?;

    if value.get("id").is_some() && value.get("genotype").is_some() {
        let (records, rejects) = dataset::read_records(input)?;
        let meta: Option<DatasetMeta> = std::fs::read_to_string(meta_path(input))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let verified = meta
            .as_ref()
            .map(|m| m.count == records.len() + rejects.len())
            .unwrap_or(false);
        let machine = json!({
            "kind": "dataset",
            "records": records.len(),
            "rejects": rejects.len(),
            "meta": meta,
            "verified": verified,
        });
        return emit(json, &machine, || {
            println!("dataset: {} records, {} rejects", records.len(), rejects.len());
            match &machine["meta"] {
                serde_json::Value::Null => println!("no sidecar metadata found"),
                meta => println!(
                    "meta: config {} tool {} count {} (verified: {verified})",
                    meta["config_hash"].as_str().map(|h| &h[..12]).unwrap_or("?"),
                    meta["tool_version"],
                    meta["count"]
                ),
            }
        });
    }

    if value.get("positions").is_some() {
        let genotype = Genotype::from_json(first_line)?;
        let space = DesignSpace::new(cfg.space.clone())?;
        let report = space.validate(&genotype);
        let stats = resolve_stats(cfg, &stats)?;
        let graph = build_arch_graph::<Real>(&genotype.canonicalize(), &stats)?;
        let machine = json!({
            "kind": "genotype",
            "admissible": report.is_admissible(),
            "violations": report.violations,
            "arch_graph": graph.to_json(),
        });
        return emit(json, &machine, || {
            println!("genotype: {}", genotype.to_json_line());
            println!("validation: {report}");
            println!("{}", serde_json::to_string_pretty(&graph.to_json()).unwrap());
        });
    }

    if value.get("result").is_some() {
        let machine = json!({
            "kind": "search_report",
            "config_hash": value["config_hash"],
            "tool_version": value["tool_version"],
            "feasible": value["result"]["feasible"],
            "best_score": value["result"]["best_score"],
        });
        return emit(json, &machine, || {
            println!(
                "search report: feasible {} best score {} (config {}, tool {})",
                value["result"]["feasible"],
                value["result"]["best_score"],
                value["config_hash"].as_str().map(|h| &h[..12]).unwrap_or("?"),
                value["tool_version"]
            );
        });
    }

    bail!("unrecognized artifact {}", input.display());
}

fn preset_export(out: Option<&Path>) -> Result<()> {
    let line = dgcnn_preset().to_json_line();
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            writeln!(file, "{line}")?;
        }
        None => println!("{line}"),
    }
    Ok(())
}
