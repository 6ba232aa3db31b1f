//! Deterministic synthetic device cost models and measurement ingestion.
//!
//! A [`DeviceProfile`] maps per-operation element counts to milliseconds via
//! fixed coefficients, standing in for on-device measurement. The built-in
//! profiles are calibrated so that graph sampling dominates on the GPU-like
//! profile while everything is expensive on the MCU-like one.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::arch_graph::GraphStats;
use crate::design_space::{ConnectFn, FunctionChoice, Genotype, OperationKind, SampleFn};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Named coefficient table defining a latency/energy cost model.
/// Coefficients are milliseconds per 10^6 element operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub c_knn: f64,
    pub c_rand: f64,
    pub c_msg: f64,
    pub c_broad: f64,
    pub c_comb: f64,
    pub c_conn: f64,
    pub avg_power_w: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("c_knn", self.c_knn),
            ("c_rand", self.c_rand),
            ("c_msg", self.c_msg),
            ("c_broad", self.c_broad),
            ("c_comb", self.c_comb),
            ("c_conn", self.c_conn),
            ("avg_power_w", self.avg_power_w),
        ] {
            if !(value > 0.0) {
                return Err(Error::Config(format!(
                    "device profile {}: {name} must be positive, got {value}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn gpu_like() -> DeviceProfile {
        DeviceProfile {
            name: "gpu_like".into(),
            c_knn: 5.0,
            c_rand: 0.2,
            c_msg: 0.3,
            c_broad: 0.3,
            c_comb: 0.05,
            c_conn: 0.02,
            avg_power_w: 150.0,
        }
    }

    pub fn cpu_like() -> DeviceProfile {
        DeviceProfile {
            name: "cpu_like".into(),
            c_knn: 8.0,
            c_rand: 0.5,
            c_msg: 2.0,
            c_broad: 2.0,
            c_comb: 0.8,
            c_conn: 0.1,
            avg_power_w: 65.0,
        }
    }

    pub fn mcu_like() -> DeviceProfile {
        DeviceProfile {
            name: "mcu_like".into(),
            c_knn: 60.0,
            c_rand: 5.0,
            c_msg: 15.0,
            c_broad: 15.0,
            c_comb: 12.0,
            c_conn: 1.0,
            avg_power_w: 5.0,
        }
    }

    pub fn builtins() -> Vec<DeviceProfile> {
        vec![Self::gpu_like(), Self::cpu_like(), Self::mcu_like()]
    }

    pub fn builtin(name: &str) -> Option<DeviceProfile> {
        Self::builtins().into_iter().find(|p| p.name == name)
    }
}

fn per_position_costs(
    profile: &DeviceProfile,
    g: &Genotype,
    stats: &GraphStats,
) -> Vec<(OperationKind, f64)> {
    let n = stats.num_points as f64;
    let edges = stats.num_edges() as f64;
    let scale = 1.0e-6;
    let mut costs = Vec::with_capacity(g.num_positions() + 1);
    if g.has_implicit_initial_sample() {
        costs.push((OperationKind::Sample, profile.c_knn * n * n * scale));
    }
    let mut feature_len = stats.input_feature_dim as f64;
    for idx in 0..g.num_positions() {
        match g.function_choice_at(idx) {
            FunctionChoice::Sample(SampleFn::Knn) => {
                costs.push((OperationKind::Sample, profile.c_knn * n * n * scale));
            }
            FunctionChoice::Sample(SampleFn::Random) => {
                costs.push((OperationKind::Sample, profile.c_rand * edges * scale));
            }
            FunctionChoice::Aggregate { message_type, .. } => {
                let msg_len = message_type.message_len(feature_len as usize) as f64;
                let work = edges * msg_len * scale;
                costs.push((
                    OperationKind::Aggregate,
                    profile.c_msg * work + profile.c_broad * work,
                ));
                feature_len = msg_len;
            }
            FunctionChoice::Combine { output_dim } => {
                let out = output_dim as f64;
                costs.push((OperationKind::Combine, profile.c_comb * n * feature_len * out * scale));
                feature_len = out;
            }
            FunctionChoice::Connect(ConnectFn::SkipConnect) => {
                costs.push((OperationKind::Connect, profile.c_conn * n * feature_len * scale));
            }
            FunctionChoice::Connect(ConnectFn::Identity) => {
                costs.push((OperationKind::Connect, 0.0));
            }
        }
    }
    costs
}

/// Predicted inference latency of a canonical genotype in milliseconds.
pub fn latency<T: Scalar>(profile: &DeviceProfile, g: &Genotype, stats: &GraphStats) -> T {
    let mut total = T::zero();
    for (_, cost) in per_position_costs(profile, g, stats) {
        total += T::from_real(cost);
    }
    total
}

/// Fraction of the total latency attributed to each operation kind.
/// Kinds absent from the genotype report a zero fraction.
pub fn breakdown<T: Scalar>(
    profile: &DeviceProfile,
    g: &Genotype,
    stats: &GraphStats,
) -> Result<BTreeMap<OperationKind, T>> {
    let costs = per_position_costs(profile, g, stats);
    let total: f64 = costs.iter().map(|(_, c)| c).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("no measurable work".into()));
    }
    let mut fractions = BTreeMap::new();
    for kind in OperationKind::ALL {
        fractions.insert(kind, 0.0f64);
    }
    for (kind, cost) in costs {
        *fractions.get_mut(&kind).expect("all kinds present") += cost;
    }
    Ok(fractions
        .into_iter()
        .map(|(kind, cost)| (kind, T::from_real(cost / total)))
        .collect())
}

/// Energy in millijoules: average power times latency (W times ms).
pub fn energy<T: Scalar>(profile: &DeviceProfile, latency_ms: T) -> T {
    T::from_real(profile.avg_power_w) * latency_ms
}

/// One measured (or synthetically labeled) architecture on one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub genotype: Genotype,
    pub stats: GraphStats,
    pub device: String,
    pub latency_ms: f64,
    pub peak_mem_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_mj: Option<f64>,
}

impl MeasurementRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if !(self.latency_ms > 0.0) {
            return Err("latency_ms > 0 violated".into());
        }
        if self.peak_mem_bytes == 0 {
            return Err("peak_mem_bytes > 0 violated".into());
        }
        if self.device.is_empty() {
            return Err("device must be non-empty".into());
        }
        self.stats.validate().map_err(|e| e.to_string())
    }
}

/// A line that failed to parse or validate during ingestion.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

/// Labeled sample with a stable key used for deterministic splits.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub key: String,
    pub record: MeasurementRecord,
}

/// Parsed measurement set plus the rejects report.
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
    /// Sorted unique device names; index order defines the device one-hot.
    pub devices: Vec<String>,
    pub rejects: Vec<RejectedLine>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn device_index(&self, device: &str) -> Option<usize> {
        self.devices.iter().position(|d| d == device)
    }

    /// Build from keyed records, deduplicating on (genotype, device) with the
    /// last occurrence winning.
    pub fn from_samples(samples: Vec<LabeledSample>) -> Result<LabeledDataset> {
        let mut dataset = LabeledDataset::default();
        let mut seen: std::collections::HashMap<(String, String), usize> =
            std::collections::HashMap::new();
        for sample in samples {
            if let Err(reason) = sample.record.check() {
                return Err(Error::InvalidInput(format!(
                    "record {}: {reason}",
                    sample.key
                )));
            }
            let identity = (
                sample.record.genotype.to_json_line(),
                sample.record.device.clone(),
            );
            match seen.get(&identity) {
                Some(&idx) => dataset.samples[idx] = sample,
                None => {
                    seen.insert(identity, dataset.samples.len());
                    dataset.samples.push(sample);
                }
            }
        }
        dataset.devices = collect_devices(&dataset.samples);
        Ok(dataset)
    }
}

fn collect_devices(samples: &[LabeledSample]) -> Vec<String> {
    let mut devices: Vec<String> = samples
        .iter()
        .map(|s| s.record.device.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    devices.sort();
    devices
}

/// Parse measurement records from JSONL, one object per line.
///
/// Malformed or invariant-violating lines are collected into the rejects
/// report; more than half malformed is a hard failure. Duplicate
/// (genotype, device) pairs keep the last record. Blank lines are ignored.
pub fn ingest_measurements<R: BufRead>(reader: R) -> Result<LabeledDataset> {
    let mut dataset = LabeledDataset::default();
    let mut seen: std::collections::HashMap<(String, String), usize> =
        std::collections::HashMap::new();
    let mut considered = 0usize;
    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        considered += 1;
        let parsed: std::result::Result<MeasurementRecord, _> = serde_json::from_str(&text);
        let record = match parsed {
            Ok(record) => record,
            Err(err) => {
                dataset.rejects.push(RejectedLine {
                    line: line_no,
                    reason: format!("parse error: {err}"),
                });
                continue;
            }
        };
        if let Err(reason) = record.check() {
            dataset.rejects.push(RejectedLine {
                line: line_no,
                reason,
            });
            continue;
        }
        let identity = (record.genotype.to_json_line(), record.device.clone());
        let sample = LabeledSample {
            key: format!("line{line_no}"),
            record,
        };
        match seen.get(&identity) {
            Some(&idx) => dataset.samples[idx] = sample,
            None => {
                seen.insert(identity, dataset.samples.len());
                dataset.samples.push(sample);
            }
        }
    }
    if considered > 0 && dataset.rejects.len() * 2 > considered {
        return Err(Error::Format(format!(
            "{} of {} lines malformed",
            dataset.rejects.len(),
            considered
        )));
    }
    dataset.devices = collect_devices(&dataset.samples);
    Ok(dataset)
}
