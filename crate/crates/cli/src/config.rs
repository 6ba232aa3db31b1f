//! Run configuration: a TOML document with `[space]`, `[stats]`,
//! `[devices.*]`, `[predictor]`, `[train]` and `[search]` sections. Every
//! field has a default; unknown keys are a hard error. The effective
//! (default-filled) document is hashed so artifacts can record exactly which
//! configuration produced them.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use edgenas::arch_graph::GraphStats;
use edgenas::design_space::SpaceConfig;
use edgenas::device_cost::DeviceProfile;
use edgenas::predictor::{PredictorConfig, Readout, TargetMetric, TrainConfig};
use edgenas::search::{Constraints, HwEvalKind, SearchConfig};

/// Per-device coefficient table, keyed by the `[devices.<name>]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub c_knn: f64,
    pub c_rand: f64,
    pub c_msg: f64,
    pub c_broad: f64,
    pub c_comb: f64,
    pub c_conn: f64,
    pub avg_power_w: f64,
}

impl DeviceSection {
    fn to_profile(&self, name: &str) -> DeviceProfile {
        DeviceProfile {
            name: name.to_string(),
            c_knn: self.c_knn,
            c_rand: self.c_rand,
            c_msg: self.c_msg,
            c_broad: self.c_broad,
            c_comb: self.c_comb,
            c_conn: self.c_conn,
            avg_power_w: self.avg_power_w,
        }
    }

    fn from_profile(profile: &DeviceProfile) -> DeviceSection {
        DeviceSection {
            c_knn: profile.c_knn,
            c_rand: profile.c_rand,
            c_msg: profile.c_msg,
            c_broad: profile.c_broad,
            c_comb: profile.c_comb,
            c_conn: profile.c_conn,
            avg_power_w: profile.avg_power_w,
        }
    }
}

/// Predictor structure; device count and encoding version are filled in at
/// training time from the dataset and the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub gcn_dims: [usize; 3],
    pub mlp_dims: [usize; 3],
    pub leaky_slope: f64,
    pub readout: Readout,
    pub log_space: bool,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let std = PredictorConfig::standard(1);
        PredictorSection {
            gcn_dims: std.gcn_dims,
            mlp_dims: std.mlp_dims,
            leaky_slope: std.leaky_slope,
            readout: std.readout,
            log_space: std.log_space,
        }
    }
}

impl PredictorSection {
    pub fn to_config(&self, num_devices: usize) -> PredictorConfig {
        PredictorConfig {
            gcn_dims: self.gcn_dims,
            mlp_dims: self.mlp_dims,
            num_devices,
            leaky_slope: self.leaky_slope,
            encoding_version: edgenas::ENCODING_VERSION,
            readout: self.readout,
            log_space: self.log_space,
        }
    }
}

/// Training hyperparameters. Batch size and learning rate default per target
/// (32 / 8e-4 for latency, 16 / 3e-4 for peak memory) when left unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub target: TargetMetric,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    pub split_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::latency_defaults();
        TrainSection {
            target: base.target,
            epochs: base.epochs,
            batch_size: None,
            learning_rate: None,
            weight_decay: base.weight_decay,
            plateau_factor: base.plateau_factor,
            plateau_patience: base.plateau_patience,
            seed: base.seed,
            split_fraction: base.split_fraction,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, target: TargetMetric) -> TrainConfig {
        let defaults = match target {
            TargetMetric::Latency => TrainConfig::latency_defaults(),
            TargetMetric::PeakMemory => TrainConfig::memory_defaults(),
        };
        TrainConfig {
            target,
            epochs: self.epochs,
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            weight_decay: self.weight_decay,
            plateau_factor: self.plateau_factor,
            plateau_patience: self.plateau_patience,
            seed: self.seed,
            split_fraction: self.split_fraction,
        }
    }
}

/// Search settings; graph statistics come from `[stats]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub alpha: f64,
    pub beta: f64,
    pub c_lat_ms: Option<f64>,
    pub c_mem_bytes: Option<f64>,
    pub population: usize,
    pub max_iterations: usize,
    pub stage1_iterations: Option<usize>,
    pub stage2_iterations: Option<usize>,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elite_count: usize,
    pub seed: u64,
    pub device: String,
    pub hw_eval: HwEvalKind,
    pub accuracy_eval: String,
    pub stage1_samples: usize,
    pub lat_ref: Option<f64>,
    pub mem_ref: Option<f64>,
    /// Weights consumed when `hw_eval = "predictor"`.
    pub latency_weights: Option<String>,
    pub memory_weights: Option<String>,
}

impl Default for SearchSection {
    fn default() -> Self {
        let base = SearchConfig::default();
        SearchSection {
            alpha: base.alpha,
            beta: base.beta,
            c_lat_ms: None,
            c_mem_bytes: None,
            population: base.population,
            max_iterations: base.max_iterations,
            stage1_iterations: None,
            stage2_iterations: None,
            mutation_rate: base.mutation_rate,
            crossover_rate: base.crossover_rate,
            elite_count: base.elite_count,
            seed: base.seed,
            device: base.device,
            hw_eval: base.hw_eval,
            accuracy_eval: base.accuracy_eval,
            stage1_samples: base.stage1_samples,
            lat_ref: None,
            mem_ref: None,
            latency_weights: None,
            memory_weights: None,
        }
    }
}

impl SearchSection {
    pub fn to_config(&self, stats: GraphStats) -> SearchConfig {
        SearchConfig {
            alpha: self.alpha,
            beta: self.beta,
            constraints: Constraints {
                c_lat_ms: self.c_lat_ms,
                c_mem_bytes: self.c_mem_bytes,
            },
            population: self.population,
            max_iterations: self.max_iterations,
            stage1_iterations: self.stage1_iterations,
            stage2_iterations: self.stage2_iterations,
            mutation_rate: self.mutation_rate,
            crossover_rate: self.crossover_rate,
            elite_count: self.elite_count,
            seed: self.seed,
            device: self.device.clone(),
            stats,
            hw_eval: self.hw_eval,
            accuracy_eval: self.accuracy_eval.clone(),
            stage1_samples: self.stage1_samples,
            lat_ref: self.lat_ref,
            mem_ref: self.mem_ref,
        }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for dataset generation; stage seeds live in their sections.
    pub seed: u64,
    pub space: SpaceConfig,
    pub stats: GraphStats,
    pub devices: BTreeMap<String, DeviceSection>,
    pub predictor: PredictorSection,
    pub train: TrainSection,
    pub search: SearchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            space: SpaceConfig::default(),
            stats: GraphStats::default(),
            devices: DeviceProfile::builtins()
                .iter()
                .map(|p| (p.name.clone(), DeviceSection::from_profile(p)))
                .collect(),
            predictor: PredictorSection::default(),
            train: TrainSection::default(),
            search: SearchSection::default(),
        }
    }
}

impl RunConfig {
    /// Validated device profiles in name order.
    pub fn device_profiles(&self) -> Result<Vec<DeviceProfile>> {
        if self.devices.is_empty() {
            bail!("configuration defines no devices");
        }
        let profiles: Vec<DeviceProfile> = self
            .devices
            .iter()
            .map(|(name, section)| section.to_profile(name))
            .collect();
        for profile in &profiles {
            profile.validate()?;
        }
        Ok(profiles)
    }

    pub fn device_profile(&self, name: &str) -> Result<DeviceProfile> {
        let section = self
            .devices
            .get(name)
            .with_context(|| format!("device {name} is not configured"))?;
        let profile = section.to_profile(name);
        profile.validate()?;
        Ok(profile)
    }

    /// Digest of the canonicalized (default-filled, key-ordered) document.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Load the configuration, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            // Empty device table means "use the built-ins", so a config that
            // omits [devices] keeps them.
            let mut cfg: RunConfig = toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            if cfg.devices.is_empty() {
                cfg.devices = RunConfig::default().devices;
            }
            cfg
        }
    };
    edgenas::design_space::DesignSpace::new(cfg.space.clone())?;
    cfg.stats.validate()?;
    cfg.device_profiles()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_hashable() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.device_profiles().unwrap().len(), 3);
        let hash = cfg.config_hash();
        assert_eq!(hash.len(), 64);
        assert_eq!(hash, RunConfig::default().config_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[space]\nnum_positions = 12\ntypo_key = 1\n")
            .unwrap_err();
        assert!(err.to_string().contains("typo_key"));
        assert!(toml::from_str::<RunConfig>("[nonsense]\nx = 1\n").is_err());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg: RunConfig =
            toml::from_str("[search]\nalpha = 2.0\n[stats]\nnum_points = 64\n").unwrap();
        assert_eq!(cfg.search.alpha, 2.0);
        assert_eq!(cfg.search.population, 20);
        assert_eq!(cfg.stats.num_points, 64);
        assert_eq!(cfg.stats.neighbors_per_node, 20);
        assert_eq!(cfg.space.num_positions, 12);
    }

    #[test]
    fn custom_devices_replace_builtins() {
        let cfg: RunConfig = toml::from_str(
            "[devices.board]\nc_knn = 1.0\nc_rand = 1.0\nc_msg = 1.0\nc_broad = 1.0\nc_comb = 1.0\nc_conn = 1.0\navg_power_w = 2.0\n",
        )
        .unwrap();
        assert_eq!(cfg.devices.len(), 1);
        let profile = cfg.device_profile("board").unwrap();
        assert_eq!(profile.avg_power_w, 2.0);
    }

    #[test]
    fn hash_tracks_content() {
        let a: RunConfig = toml::from_str("[search]\nalpha = 1.0\n").unwrap();
        let b: RunConfig = toml::from_str("[search]\nalpha = 2.0\n").unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
