//! Warm-start transfer: initializing the peak-memory predictor from a trained
//! latency predictor should not hurt, and usually helps, at equal budgets.

use edgenas::arch_graph::GraphStats;
use edgenas::design_space::{DesignSpace, SpaceConfig};
use edgenas::device_cost::{
    latency, DeviceProfile, LabeledDataset, LabeledSample, MeasurementRecord,
};
use edgenas::mem_model::simulate_memory_trace;
use edgenas::predictor::{init_model, train, warm_start, PredictorConfig, TrainConfig};

fn synthetic_dataset(count: usize, seed_base: u64) -> LabeledDataset {
    let space = DesignSpace::new(SpaceConfig::default()).unwrap();
    let profile = DeviceProfile::gpu_like();
    let stats = GraphStats::default();
    let mut samples = Vec::new();
    let mut seed = seed_base;
    while samples.len() < count {
        let genotype = space.sample_genotype(seed).canonicalize();
        seed += 1;
        let latency_ms: f64 = latency(&profile, &genotype, &stats);
        if latency_ms <= 0.0 {
            continue;
        }
        let trace = simulate_memory_trace(&genotype, &stats);
        samples.push(LabeledSample {
            key: format!("w{}", samples.len()),
            record: MeasurementRecord {
                genotype,
                stats,
                device: "gpu_like".into(),
                latency_ms,
                peak_mem_bytes: trace.peak_bytes,
                energy_mj: None,
            },
        });
    }
    LabeledDataset::from_samples(samples).unwrap()
}

#[test]
fn warm_start_beats_cold_start_in_most_seeds() {
    let data = synthetic_dataset(300, 1000);
    let cfg = PredictorConfig {
        gcn_dims: [16, 16, 16],
        mlp_dims: [8, 4, 1],
        ..PredictorConfig::toy(1)
    };
    let epochs = 12;
    let mut wins = 0;
    for seed in 0..10u64 {
        let latency_tc = TrainConfig {
            epochs,
            seed,
            learning_rate: 0.003,
            ..TrainConfig::latency_defaults()
        };
        let (latency_model, _) =
            train(init_model::<f64>(&cfg, seed).unwrap(), &data, &latency_tc).unwrap();

        let memory_tc = TrainConfig {
            epochs,
            seed,
            learning_rate: 0.003,
            ..TrainConfig::memory_defaults()
        };
        let cold = init_model::<f64>(&cfg, seed + 500).unwrap();
        let warm = warm_start(&cold, &latency_model).unwrap();

        let (_, cold_history) = train(cold, &data, &memory_tc).unwrap();
        let (_, warm_history) = train(warm, &data, &memory_tc).unwrap();
        let cold_final = cold_history.last().unwrap().val_mape;
        let warm_final = warm_history.last().unwrap().val_mape;
        if warm_final <= cold_final {
            wins += 1;
        }
    }
    assert!(wins >= 7, "warm start won only {wins}/10 seeds");
}
