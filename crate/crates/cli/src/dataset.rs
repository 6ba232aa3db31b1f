//! Architecture-record datasets: deterministic generation, tolerant reading,
//! and conversion into labeled training sets.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use edgenas::arch_graph::GraphStats;
use edgenas::design_space::{DesignSpace, Genotype};
use edgenas::device_cost::{self, LabeledDataset, LabeledSample, MeasurementRecord};
use edgenas::mem_model::simulate_memory_trace;
use edgenas::seeds::derive_seed;

/// Per-device labels of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricLabel {
    pub latency_ms: f64,
    pub peak_mem_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_mj: Option<f64>,
}

/// One dataset row: a canonical genotype with labels for every device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureRecord {
    pub id: String,
    pub genotype: Genotype,
    pub stats: GraphStats,
    pub labels: BTreeMap<String, MetricLabel>,
}

/// Sidecar metadata written next to every generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub config_hash: String,
    pub tool_version: String,
    pub count: usize,
    pub seed: u64,
    pub devices: Vec<String>,
}

pub fn meta_path(dataset: &Path) -> std::path::PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    dataset.with_file_name(name)
}

/// Generate `count` labeled records, one JSONL line each, plus the sidecar
/// metadata file. Deterministic for a given configuration and seed: every
/// genotype draw consumes one counter of the root seed, and genotypes whose
/// labels would violate the positive-latency invariant are skipped.
pub fn gen_dataset(cfg: &RunConfig, count: usize, seed: u64, out: &Path) -> Result<DatasetMeta> {
    if count == 0 {
        bail!("count must be at least 1");
    }
    let space = DesignSpace::new(cfg.space.clone())?;
    let profiles = cfg.device_profiles()?;
    let stats = cfg.stats;
    stats.validate()?;

    let file = std::fs::File::create(out)
        .with_context(|| format!("creating dataset {}", out.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    let mut counter = 0u64;
    for index in 0..count {
        let record = loop {
            let genotype = space
                .sample_genotype(derive_seed(seed, "dataset", counter))
                .canonicalize();
            counter += 1;
            let mut labels = BTreeMap::new();
            let mut positive = true;
            for profile in &profiles {
                let latency_ms: f64 = device_cost::latency(profile, &genotype, &stats);
                if !(latency_ms > 0.0) {
                    positive = false;
                    break;
                }
                let trace = simulate_memory_trace(&genotype, &stats);
                labels.insert(
                    profile.name.clone(),
                    MetricLabel {
                        latency_ms,
                        peak_mem_bytes: trace.peak_bytes,
                        energy_mj: Some(device_cost::energy(profile, latency_ms)),
                    },
                );
            }
            if positive {
                break ArchitectureRecord {
                    id: format!("a{index:06}"),
                    genotype,
                    stats,
                    labels,
                };
            }
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;

    let meta = DatasetMeta {
        kind: "dataset".into(),
        config_hash: cfg.config_hash(),
        tool_version: edgenas::TOOL_VERSION.into(),
        count,
        seed,
        devices: profiles.iter().map(|p| p.name.clone()).collect(),
    };
    std::fs::write(meta_path(out), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

/// Rejected lines as (line number, reason) pairs.
pub type LineRejects = Vec<(usize, String)>;

/// Tolerant JSONL reader mirroring the measurement-ingestion semantics:
/// malformed lines and duplicate ids are reported, more than half malformed
/// is a hard failure.
pub fn read_records(path: &Path) -> Result<(Vec<ArchitectureRecord>, LineRejects)> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening dataset {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut considered = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        considered += 1;
        match serde_json::from_str::<ArchitectureRecord>(&text) {
            Ok(record) => {
                if !seen_ids.insert(record.id.clone()) {
                    rejects.push((line_no, format!("duplicate id {}", record.id)));
                } else if record
                    .labels
                    .values()
                    .any(|l| !(l.latency_ms > 0.0) || l.peak_mem_bytes == 0)
                {
                    rejects.push((line_no, "label values must be positive".into()));
                } else {
                    records.push(record);
                }
            }
            Err(err) => rejects.push((line_no, format!("parse error: {err}"))),
        }
    }
    if considered > 0 && rejects.len() * 2 > considered {
        bail!("{} of {considered} lines malformed", rejects.len());
    }
    Ok((records, rejects))
}

/// Flatten records into per-(architecture, device) labeled samples.
///
/// `device_order`, when given, pins the device list (and therefore the
/// one-hot indices) instead of deriving it from the records; `device_filter`
/// keeps a single device's labels.
pub fn to_labeled_dataset(
    records: &[ArchitectureRecord],
    device_filter: Option<&str>,
    device_order: Option<&[String]>,
) -> Result<LabeledDataset> {
    let mut samples = Vec::new();
    for record in records {
        for (device, label) in &record.labels {
            if let Some(filter) = device_filter {
                if device != filter {
                    continue;
                }
            }
            if let Some(order) = device_order {
                if !order.contains(device) {
                    bail!(
                        "record {} labels device {device}, not in the model's device list {order:?}",
                        record.id
                    );
                }
            }
            samples.push(LabeledSample {
                key: format!("{}:{}", record.id, device),
                record: MeasurementRecord {
                    genotype: record.genotype.clone(),
                    stats: record.stats,
                    device: device.clone(),
                    latency_ms: label.latency_ms,
                    peak_mem_bytes: label.peak_mem_bytes,
                    energy_mj: label.energy_mj,
                },
            });
        }
    }
    if samples.is_empty() {
        bail!("no labeled samples matched (filter: {device_filter:?})");
    }
    let mut dataset = LabeledDataset::from_samples(samples)?;
    if let Some(order) = device_order {
        dataset.devices = order.to_vec();
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn generation_is_deterministic_and_counted() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig::default();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        gen_dataset(&cfg, 20, 7, &a).unwrap();
        gen_dataset(&cfg, 20, 7, &b).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(bytes_a.iter().filter(|c| **c == b'\n').count(), 20);

        let (records, rejects) = read_records(&a).unwrap();
        assert_eq!(records.len(), 20);
        assert!(rejects.is_empty());
        let mut ids: Vec<_> = records.iter().map(|r| r.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        // every record labeled for every built-in device
        assert!(records.iter().all(|r| r.labels.len() == 3));

        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(meta_path(&a)).unwrap()).unwrap();
        assert_eq!(meta.count, 20);
        assert_eq!(meta.config_hash, cfg.config_hash());
    }

    #[test]
    fn zero_count_is_rejected() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("x.jsonl");
        assert!(gen_dataset(&RunConfig::default(), 0, 1, &out).is_err());
    }

    #[test]
    fn reader_reports_bad_lines() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig::default();
        let path = dir.path().join("d.jsonl");
        gen_dataset(&cfg, 5, 3, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("not json\n");
        std::fs::write(&path, text).unwrap();
        let (records, rejects) = read_records(&path).unwrap();
        assert_eq!(records.len(), 5);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects[0].0, 6);
    }

    #[test]
    fn labeled_conversion_filters_and_orders() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig::default();
        let path = dir.path().join("d.jsonl");
        gen_dataset(&cfg, 8, 3, &path).unwrap();
        let (records, _) = read_records(&path).unwrap();

        let all = to_labeled_dataset(&records, None, None).unwrap();
        assert_eq!(all.len(), 24);
        assert_eq!(all.devices, vec!["cpu_like", "gpu_like", "mcu_like"]);

        let gpu = to_labeled_dataset(&records, Some("gpu_like"), None).unwrap();
        assert_eq!(gpu.len(), 8);
        assert_eq!(gpu.devices, vec!["gpu_like"]);

        let order = vec!["gpu_like".to_string(), "cpu_like".into(), "mcu_like".into()];
        let pinned = to_labeled_dataset(&records, None, Some(&order)).unwrap();
        assert_eq!(pinned.devices, order);
    }
}
