//! Randomized invariants over the whole design space.

use proptest::prelude::*;

use edgenas::arch_graph::{build_arch_graph, GraphStats};
use edgenas::design_space::{
    Aggregator, ConnectFn, DesignSpace, FunctionSet, Genotype, MessageType, OperationKind,
    SampleFn, SpaceConfig,
};
use edgenas::device_cost::{breakdown, DeviceProfile};
use edgenas::mem_model::{estimate_peak_memory, simulate_memory_trace};

fn space() -> DesignSpace {
    DesignSpace::new(SpaceConfig::default()).unwrap()
}

fn operation_kind() -> impl Strategy<Value = OperationKind> {
    prop::sample::select(OperationKind::ALL.to_vec())
}

fn function_set() -> impl Strategy<Value = FunctionSet> {
    (
        prop::sample::select(ConnectFn::ALL.to_vec()),
        prop::sample::select(Aggregator::ALL.to_vec()),
        prop::sample::select(MessageType::ALL.to_vec()),
        prop::sample::select(vec![8u32, 16, 32, 64, 128, 256]),
        prop::sample::select(SampleFn::ALL.to_vec()),
    )
        .prop_map(|(connect_fn, aggregator, message_type, combine_dim, sample_fn)| FunctionSet {
            connect_fn,
            aggregator,
            message_type,
            combine_dim,
            sample_fn,
        })
}

fn genotype() -> impl Strategy<Value = Genotype> {
    (
        prop::collection::vec(operation_kind(), 12),
        function_set(),
        function_set(),
    )
        .prop_map(|(positions, upper_fns, lower_fns)| Genotype {
            positions,
            upper_fns,
            lower_fns,
        })
}

fn graph_stats() -> impl Strategy<Value = GraphStats> {
    (
        1usize..2048,
        1usize..48,
        1usize..16,
        1usize..4,
        prop::sample::select(vec![2u32, 4, 8]),
        prop::sample::select(vec![2u32, 4, 8]),
    )
        .prop_map(
            |(num_points, neighbors_per_node, input_feature_dim, batch_size, wp, ip)| GraphStats {
                num_points,
                neighbors_per_node,
                input_feature_dim,
                batch_size,
                weight_precision: wp,
                index_precision: ip,
            },
        )
}

proptest! {
    #[test]
    fn canonicalize_is_idempotent(g in genotype()) {
        let once = g.canonicalize();
        prop_assert_eq!(once.canonicalize(), once);
    }

    #[test]
    fn canonical_genotypes_have_no_adjacent_samples(g in genotype()) {
        let canonical = g.canonicalize();
        for pair in canonical.positions.windows(2) {
            prop_assert!(
                !(pair[0] == OperationKind::Sample && pair[1] == OperationKind::Sample)
            );
        }
    }

    #[test]
    fn mutation_stays_admissible(g in genotype(), rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let mutated = space().mutate(&g, rate, seed).unwrap();
        prop_assert!(space().validate(&mutated).is_admissible());
    }

    #[test]
    fn crossover_stays_admissible(a in genotype(), b in genotype(), seed in any::<u64>()) {
        let child = space().crossover(&a, &b, seed).unwrap();
        prop_assert!(space().validate(&child).is_admissible());
    }

    #[test]
    fn serialization_round_trips(g in genotype()) {
        let line = g.to_json_line();
        prop_assert_eq!(Genotype::from_json(&line).unwrap(), g);
    }

    #[test]
    fn estimator_matches_simulator(g in genotype(), stats in graph_stats()) {
        let canonical = g.canonicalize();
        let trace = simulate_memory_trace(&canonical, &stats);
        prop_assert_eq!(estimate_peak_memory(&canonical, &stats), trace.peak_bytes);
        prop_assert!(trace.peak_bytes >= trace.base_bytes);
    }

    #[test]
    fn arch_graph_features_stay_in_unit_interval(g in genotype(), stats in graph_stats()) {
        let graph = build_arch_graph::<f64>(&g, &stats).unwrap();
        prop_assert!(graph.features.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn breakdown_fractions_form_a_distribution(g in genotype()) {
        let canonical = g.canonicalize();
        match breakdown::<f64>(&DeviceProfile::cpu_like(), &canonical, &GraphStats::default()) {
            Ok(fractions) => {
                let sum: f64 = fractions.values().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(fractions.values().all(|f| *f >= 0.0));
            }
            // all-identity genotypes have no measurable work
            Err(_) => prop_assert_eq!(
                canonical.positions.iter().filter(|k| **k != OperationKind::Connect).count(),
                0
            ),
        }
    }
}
